//! Discriminator, the generator/discriminator objectives and the alternating
//! training step.

use alloc::string::String;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use crate::config::{ModelConfig, RunConfig};
use crate::imagination::Noise;
use crate::model::{Example, ImagiT};
use crate::nn::{instance_norm, Conv2d, Fwd, Linear};
use crate::numerics::{Adam, GradPolicy, Graph, ParameterStore, RngStreams, Stream, Tensor, Var};
use crate::{Error, Result};

pub const PREFIX: &str = "disc.";

/// Strided conv stem with an unconditional and a sentence-conditional head.
#[derive(Clone, Debug)]
pub struct Discriminator {
    stem: [Conv2d; 3],
    uncond: Linear,
    cond_hidden: Linear,
    cond_out: Linear,
    features: usize,
    d: usize,
    hidden: usize,
}

impl Discriminator {
    pub fn new(cfg: &ModelConfig) -> Self {
        let w = cfg.disc_width;
        let side = cfg.image_size / 8;
        Self {
            stem: [
                Conv2d::new("disc.conv1", 3, w, 4, 2, 1, true),
                Conv2d::new("disc.conv2", w, 2 * w, 4, 2, 1, false),
                Conv2d::new("disc.conv3", 2 * w, 4 * w, 4, 2, 1, false),
            ],
            uncond: Linear::new("disc.uncond", true),
            cond_hidden: Linear::new("disc.cond.hidden", true),
            cond_out: Linear::new("disc.cond.out", true),
            features: 4 * w * side * side,
            d: cfg.d_model,
            hidden: cfg.disc_hidden,
        }
    }

    pub fn init(&self, store: &mut ParameterStore, rng: &mut ChaCha8Rng) -> Result<()> {
        for c in &self.stem {
            c.init(store, rng)?;
        }
        self.uncond.init(store, self.features, 1, rng)?;
        self.cond_hidden.init(store, self.features + self.d, self.hidden, rng)?;
        self.cond_out.init(store, self.hidden, 1, rng)
    }

    /// Zero both output layers so each head outputs exactly 0.5.
    pub fn force_half(store: &mut ParameterStore) -> Result<()> {
        for name in ["disc.uncond.w", "disc.uncond.b", "disc.cond.out.w", "disc.cond.out.b"] {
            store.get_mut(name)?.tensor.data_mut().fill(0.0);
        }
        Ok(())
    }

    fn stem(&self, f: &mut Fwd, img: Var) -> Result<Var> {
        let mut x = self.stem[0].forward(f, img)?;
        x = f.g.relu(x)?;
        for c in &self.stem[1..] {
            x = c.forward(f, x)?;
            x = instance_norm(f, x)?;
            x = f.g.relu(x)?;
        }
        Ok(f.g.reshape(x, &[1, self.features])?)
    }

    /// `(D(img), D(img, s))`, each `1 × 1` in (0, 1).
    pub fn discriminate(&self, f: &mut Fwd, img: Var, s: Var) -> Result<(Var, Var)> {
        let feat = self.stem(f, img)?;
        let u = self.uncond.forward(f, feat)?;
        let u = f.g.sigmoid(u)?;
        let x = f.g.concat_cols(&[feat, s])?;
        let h = self.cond_hidden.forward(f, x)?;
        let h = f.g.relu(h)?;
        let c = self.cond_out.forward(f, h)?;
        Ok((u, f.g.sigmoid(c)?))
    }
}

fn one_minus(g: &mut Graph, p: Var) -> Result<Var> {
    let n = g.scale(p, -1.0)?;
    Ok(g.add_scalar(n, 1.0)?)
}

fn mean(g: &mut Graph, xs: &[Var]) -> Result<Var> {
    if xs.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let cat = if xs.len() == 1 { xs[0] } else { g.concat_rows(xs)? };
    let s = g.sum(cat)?;
    Ok(g.scale(s, 1.0 / xs.len() as f64)?)
}

/// `−½ log D(f1) − ½ log D(f1, s)`, averaged over the batch.
pub fn generator_adv_loss(g: &mut Graph, fake: &[(Var, Var)], floor: f64) -> Result<Var> {
    let mut terms = Vec::with_capacity(fake.len());
    for &(u, c) in fake {
        let lu = g.log_clamped(u, floor)?;
        let lc = g.log_clamped(c, floor)?;
        let t = g.add(lu, lc)?;
        terms.push(g.scale(t, -0.5)?);
    }
    mean(g, &terms)
}

/// `−½E log D(I) − ½E log(1 − D(f1)) − ½E log D(I, s) − ½E log(1 − D(f1, s))`.
pub fn discriminator_loss(g: &mut Graph, real: &[(Var, Var)], fake: &[(Var, Var)], floor: f64) -> Result<Var> {
    let mut r = Vec::with_capacity(real.len());
    for &(u, c) in real {
        let lu = g.log_clamped(u, floor)?;
        let lc = g.log_clamped(c, floor)?;
        r.push(g.add(lu, lc)?);
    }
    let mut q = Vec::with_capacity(fake.len());
    for &(u, c) in fake {
        let u = one_minus(g, u)?;
        let c = one_minus(g, c)?;
        let lu = g.log_clamped(u, floor)?;
        let lc = g.log_clamped(c, floor)?;
        q.push(g.add(lu, lc)?);
    }
    let r = mean(g, &r)?;
    let q = mean(g, &q)?;
    let t = g.add(r, q)?;
    Ok(g.scale(t, -0.5)?)
}

/// `L_G = L_G0 + λ1 L_I2T + λ2 L_trans`.
pub fn compose_generator_loss(g: &mut Graph, l_g0: Var, l_i2t: Var, l_trans: Var, lambda1: f64, lambda2: f64) -> Result<Var> {
    let a = g.scale(l_i2t, lambda1)?;
    let b = g.scale(l_trans, lambda2)?;
    let s = g.add(l_g0, a)?;
    Ok(g.add(s, b)?)
}

/// Scalar losses of one training step and the weights that combined them.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBundle {
    pub l_trans: f64,
    pub l_i2t: f64,
    pub l_g0: f64,
    pub l_g: f64,
    pub l_d: f64,
    pub l_kl: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl LossBundle {
    /// `l_g0 + λ1 l_i2t + λ2 l_trans`, evaluated in the same order as the graph.
    pub fn composed(&self) -> f64 {
        self.l_g0 + self.lambda1 * self.l_i2t + self.lambda2 * self.l_trans
    }
}

/// Parameter names that received gradients in each half of a step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradAudit {
    pub d_step: Vec<String>,
    pub g_step: Vec<String>,
}

/// One step's losses, learning rates and gradient audit.
#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub epoch: u64,
    pub losses: LossBundle,
    pub lr_translation: f64,
    pub lr_gan: f64,
    pub audit: GradAudit,
}

/// Optimizer state for the three parameter groups.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub store: ParameterStore,
    pub translation: Adam,
    pub imagination: Adam,
    pub disc: Adam,
    /// Steps completed so far.
    pub step: u64,
    streams: RngStreams,
}

pub const TRANSLATION_GROUP: [&str; 3] = ["encoder.", "aggregation.", "decoder."];
pub const IMAGINATION_GROUP: [&str; 1] = ["imagination."];

impl TrainState {
    /// With imagination disabled the image-side parameters are frozen.
    pub fn new(mut store: ParameterStore, cfg: &RunConfig) -> Self {
        if !cfg.model.imagination {
            for prefix in [IMAGINATION_GROUP[0], PREFIX, crate::aggregation_decoder::VISUAL_PREFIX] {
                store.set_trainable_prefix(prefix, false);
            }
        }
        Self {
            store,
            translation: Adam::new(cfg.train.translation_adam, GradPolicy::only(&TRANSLATION_GROUP)),
            imagination: Adam::new(cfg.train.gan_adam, GradPolicy::only(&IMAGINATION_GROUP)),
            disc: Adam::new(cfg.train.gan_adam, GradPolicy::only(&[PREFIX])),
            step: 0,
            streams: RngStreams::new(cfg.seed),
        }
    }

    /// Noise for example `i` of the next step.
    pub fn noise(&self, cfg: &ModelConfig, i: usize) -> Noise {
        let idx = (self.step + 1) * 1_000_003 + i as u64;
        Noise::sample(cfg, &mut self.streams.substream(Stream::NoiseZ, idx), &mut self.streams.substream(Stream::CaEpsilon, idx))
    }
}

fn check(name: &'static str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteLoss(name))
    }
}

fn audit(names: Vec<String>, allowed: impl Fn(&str) -> bool, what: &str) -> Result<Vec<String>> {
    if let Some(bad) = names.iter().find(|n| !allowed(n)) {
        return Err(Error::Invalid(alloc::format!("{what} produced a gradient for `{bad}`")));
    }
    Ok(names)
}

/// One discriminator update followed by one generator update. `epoch` is 1-based.
pub fn train_step(model: &ImagiT, cfg: &RunConfig, state: &mut TrainState, batch: &[&Example], epoch: u64) -> Result<StepReport> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let step = state.step + 1;
    let lr_translation = cfg.translation_schedule().lr(step)?;
    let lr_gan = cfg.gan_schedule().lr(epoch.max(1))?;
    let lambda1 = cfg.loss.lambda1;
    let lambda2 = cfg.loss.lambda2;
    let floor = cfg.loss.log_floor;
    let imagine = cfg.model.imagination;
    let g_policy = GradPolicy::except(&[PREFIX, crate::captioner::PREFIX]);
    let noises: Vec<Noise> = (0..batch.len()).map(|i| state.noise(&cfg.model, i)).collect();

    let mut g = Graph::new();
    let mut passes = Vec::with_capacity(batch.len());
    {
        let drop = state.streams.substream(Stream::Dropout, 2 * step);
        let mut f = Fwd::new(&mut g, &state.store, &g_policy).with_dropout(cfg.model.dropout, drop);
        for (ex, noise) in batch.iter().zip(&noises) {
            passes.push(model.generator_pass(&mut f, &ex.src, imagine.then_some(noise))?);
        }
    }

    let mut audit_rec = GradAudit::default();
    let mut l_d = 0.0;
    if imagine {
        for _ in 0..cfg.train.d_steps_per_g.max(1) {
            let d_policy = GradPolicy::only(&[PREFIX]);
            let mut dg = Graph::new();
            let mut f = Fwd::new(&mut dg, &state.store, &d_policy);
            let mut real = Vec::with_capacity(batch.len());
            let mut fake = Vec::with_capacity(batch.len());
            for (ex, p) in batch.iter().zip(&passes) {
                let im = p.imagined.as_ref().expect("imagination enabled");
                let s = f.g.constant(g.value(p.enc.s).clone());
                let img = f.g.constant(ex.image.clone());
                real.push(model.disc.discriminate(&mut f, img, s)?);
                let fake_img = f.g.constant(g.value(im.image).clone());
                fake.push(model.disc.discriminate(&mut f, fake_img, s)?);
            }
            let loss = discriminator_loss(f.g, &real, &fake, floor)?;
            l_d = check("l_d", dg.scalar(loss))?;
            let grads = dg.backward(loss)?;
            audit_rec.d_step = audit(grads.params().keys().cloned().collect(), |n| n.starts_with(PREFIX), "discriminator step")?;
            state.disc.step(&mut state.store, grads.params(), lr_gan)?;
        }
    }

    let drop = state.streams.substream(Stream::Dropout, 2 * step + 1);
    let mut f = Fwd::new(&mut g, &state.store, &g_policy).with_dropout(cfg.model.dropout, drop);
    let mut trans = Vec::with_capacity(batch.len());
    let mut caps = Vec::new();
    let mut fakes = Vec::new();
    let mut kls = Vec::new();
    let (mut tgt_tokens, mut src_tokens) = (0, 0);
    for (ex, p) in batch.iter().zip(&passes) {
        let (lt, n) = model.decoder.translation_loss(&mut f, &p.memory, &ex.tgt, cfg.loss.label_smoothing)?;
        trans.push(lt);
        tgt_tokens += n;
        if let Some(im) = &p.imagined {
            if lambda1 > 0.0 {
                let src = ex.src.real_ids();
                src_tokens += src.len();
                caps.push(model.captioner.caption_loss(&mut f, im.f1, &src)?);
            }
            fakes.push(model.disc.discriminate(&mut f, im.image, p.enc.s)?);
            if cfg.loss.kl {
                kls.push(model.imagination.kl(&mut f, &im.ca)?);
            }
        }
    }
    let sum_over = |g: &mut Graph, xs: &[Var], n: usize| -> Result<Var> {
        if xs.is_empty() {
            return Ok(g.constant(Tensor::scalar(0.0)));
        }
        let cat = if xs.len() == 1 { xs[0] } else { g.concat_rows(xs)? };
        let s = g.sum(cat)?;
        Ok(g.scale(s, 1.0 / n.max(1) as f64)?)
    };
    let l_trans = sum_over(f.g, &trans, tgt_tokens)?;
    let l_i2t = sum_over(f.g, &caps, src_tokens)?;
    let l_g0 = if fakes.is_empty() { f.g.constant(Tensor::scalar(0.0)) } else { generator_adv_loss(f.g, &fakes, floor)? };
    let l_g = compose_generator_loss(f.g, l_g0, l_i2t, l_trans, lambda1, lambda2)?;
    let l_kl = sum_over(f.g, &kls, kls.len())?;
    let total = if kls.is_empty() {
        l_g
    } else {
        let k = f.g.scale(l_kl, cfg.loss.kl_weight)?;
        f.g.add(l_g, k)?
    };
    let losses = LossBundle {
        l_trans: check("l_trans", g.scalar(l_trans))?,
        l_i2t: check("l_i2t", g.scalar(l_i2t))?,
        l_g0: check("l_g0", g.scalar(l_g0))?,
        l_g: check("l_g", g.scalar(l_g))?,
        l_d,
        l_kl: check("l_kl", g.scalar(l_kl))?,
        lambda1,
        lambda2,
    };
    let grads = g.backward(total)?;
    audit_rec.g_step = audit(
        grads.params().keys().cloned().collect(),
        |n| !n.starts_with(PREFIX) && !n.starts_with(crate::captioner::PREFIX),
        "generator step",
    )?;
    state.translation.step(&mut state.store, grads.params(), lr_translation)?;
    if imagine {
        state.imagination.step(&mut state.store, grads.params(), lr_gan)?;
    }
    state.step = step;
    Ok(StepReport { step, epoch, losses, lr_translation, lr_gan, audit: audit_rec })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn composition_arithmetic() {
        let b = LossBundle { l_g0: 1.0, l_i2t: 0.5, l_trans: 0.25, lambda1: 20.0, lambda2: 40.0, ..Default::default() };
        assert_eq!(b.composed(), 21.0);
    }

    #[test]
    fn composed_graph_matches_bundle_order() {
        let mut g = Graph::new();
        let (a, b, c) = (0.123456789, 0.987654321, 0.31415926535);
        let va = g.constant(Tensor::scalar(a));
        let vb = g.constant(Tensor::scalar(b));
        let vc = g.constant(Tensor::scalar(c));
        let l = compose_generator_loss(&mut g, va, vb, vc, 20.0, 40.0).unwrap();
        let bundle = LossBundle { l_g0: a, l_i2t: b, l_trans: c, lambda1: 20.0, lambda2: 40.0, ..Default::default() };
        assert_eq!(g.scalar(l).to_bits(), bundle.composed().to_bits());
    }
}
