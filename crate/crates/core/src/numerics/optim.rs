use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{GradPolicy, NumericsError, ParameterStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    /// Translation-path defaults.
    pub const TRANSFORMER: Self = Self { beta1: 0.9, beta2: 0.98, eps: 1e-9 };
    /// Generator/discriminator defaults.
    pub const GAN: Self = Self { beta1: 0.5, beta2: 0.999, eps: 1e-8 };
}

#[derive(Clone, Debug)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Adam with bias correction over the parameters selected by `policy`.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    policy: GradPolicy,
    step: u64,
    state: BTreeMap<String, Moments>,
}

impl Adam {
    pub fn new(config: AdamConfig, policy: GradPolicy) -> Self {
        Self { config, policy, step: 0, state: BTreeMap::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn policy(&self) -> &GradPolicy {
        &self.policy
    }

    /// One update. Every parameter this optimizer owns must have a gradient.
    pub fn step(&mut self, store: &mut ParameterStore, grads: &BTreeMap<String, Tensor>, lr: f64) -> Result<(), NumericsError> {
        for p in store.iter() {
            if self.policy.tracks(p) {
                match grads.get(&p.name) {
                    Some(g) if g.numel() == p.tensor.numel() => {}
                    Some(g) => {
                        return Err(NumericsError::ShapeMismatch {
                            op: "adam_step",
                            lhs: p.tensor.shape().to_vec(),
                            rhs: g.shape().to_vec(),
                        })
                    }
                    None => return Err(NumericsError::MissingGradient(p.name.clone())),
                }
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let t = self.step as f64;
        let bc1 = 1.0 - libm::pow(beta1, t);
        let bc2 = 1.0 - libm::pow(beta2, t);
        for p in store.iter_mut() {
            if !self.policy.tracks(p) {
                continue;
            }
            let g = grads[&p.name].data();
            let n = g.len();
            let st = self.state.entry(p.name.clone()).or_insert_with(|| Moments { m: vec![0.0; n], v: vec![0.0; n] });
            for (i, w) in p.tensor.data_mut().iter_mut().enumerate() {
                st.m[i] = beta1 * st.m[i] + (1.0 - beta1) * g[i];
                st.v[i] = beta2 * st.v[i] + (1.0 - beta2) * g[i] * g[i];
                let mhat = st.m[i] / bc1;
                let vhat = st.v[i] / bc2;
                *w -= lr * mhat / (libm::sqrt(vhat) + eps);
            }
        }
        Ok(())
    }
}

/// Functional form of a single Adam update on a fresh optimizer state.
pub fn adam_step(
    store: &mut ParameterStore,
    grads: &BTreeMap<String, Tensor>,
    lr: f64,
    config: AdamConfig,
) -> Result<(), NumericsError> {
    Adam::new(config, GradPolicy::All).step(store, grads, lr)
}
