//! Central finite-difference gradient oracle.

use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{GradPolicy, Graph, NumericsError, ParameterStore, Tensor, Var};

/// Options for a finite-difference check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    pub eps: f64,
    /// Check at most this many coordinates per input tensor (sampled without
    /// replacement); `None` checks every coordinate.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self { eps: 1e-5, max_coords: None, seed: 0 }
    }
}

impl GradCheck {
    pub fn with_eps(eps: f64) -> Self {
        Self { eps, ..Self::default() }
    }

    fn validate(&self) -> Result<(), NumericsError> {
        if !(1e-7..=1e-3).contains(&self.eps) {
            return Err(NumericsError::BadEps(self.eps));
        }
        Ok(())
    }

    fn coords(&self, n: usize, salt: u64) -> Vec<usize> {
        match self.max_coords {
            Some(k) if k < n => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ salt.wrapping_mul(0x9E37_79B9));
                let mut idx = sample(&mut rng, n, k).into_vec();
                idx.sort_unstable();
                idx
            }
            _ => (0..n).collect(),
        }
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / 1f64.max(a.abs()).max(n.abs())
}

/// Max relative error between analytic and central-difference gradients of a
/// scalar function of `inputs`.
pub fn grad_check<E, F>(f: F, inputs: &[Tensor], opts: GradCheck) -> Result<f64, E>
where
    E: From<NumericsError>,
    F: Fn(&mut Graph, &[Var]) -> Result<Var, E>,
{
    opts.validate()?;
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;

    let eval = |ins: &[Tensor]| -> Result<f64, E> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.scalar(out))
    };

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.wrt(*v).map(<[f64]>::to_vec).unwrap_or_else(|| alloc::vec![0.0; inputs[k].numel()]);
        for i in opts.coords(inputs[k].numel(), k as u64) {
            let orig = inputs[k].data()[i];
            work[k].data_mut()[i] = orig + opts.eps;
            let up = eval(&work)?;
            work[k].data_mut()[i] = orig - opts.eps;
            let down = eval(&work)?;
            work[k].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * opts.eps);
            worst = worst.max(rel_err(analytic[i], numeric));
        }
    }
    Ok(worst)
}

/// Same check, taken w.r.t. every parameter of `store` tracked by `policy`.
pub fn grad_check_store<E, F>(f: F, store: &ParameterStore, policy: &GradPolicy, opts: GradCheck) -> Result<f64, E>
where
    E: From<NumericsError>,
    F: Fn(&mut Graph, &ParameterStore, &GradPolicy) -> Result<Var, E>,
{
    opts.validate()?;
    let mut g = Graph::new();
    let out = f(&mut g, store, policy)?;
    let grads = g.backward(out)?;
    let grads = grads.params();

    let eval = |s: &ParameterStore| -> Result<f64, E> {
        let mut g = Graph::new();
        let out = f(&mut g, s, &GradPolicy::None)?;
        Ok(g.scalar(out))
    };

    let names: Vec<_> = store.iter().filter(|p| policy.tracks(p)).map(|p| p.name.clone()).collect();
    let mut work = store.clone();
    let mut worst = 0.0f64;
    for (k, name) in names.iter().enumerate() {
        let n = store.get(name)?.tensor.numel();
        let zero = Tensor::zeros(&[n]);
        let analytic = grads.get(name).unwrap_or(&zero).data().to_vec();
        for i in opts.coords(n, k as u64) {
            let orig = store.get(name)?.tensor.data()[i];
            work.get_mut(name)?.tensor.data_mut()[i] = orig + opts.eps;
            let up = eval(&work)?;
            work.get_mut(name)?.tensor.data_mut()[i] = orig - opts.eps;
            let down = eval(&work)?;
            work.get_mut(name)?.tensor.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * opts.eps);
            worst = worst.max(rel_err(analytic[i], numeric));
        }
    }
    Ok(worst)
}
