//! Finite-difference checks over each component's forward path.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::adversarial::discriminator_loss;
use crate::config::RunConfig;
use crate::imagination::Noise;
use crate::model::ImagiT;
use crate::nn::Fwd;
use crate::numerics::{grad_check, grad_check_store, GradCheck, GradPolicy, Graph, ParameterStore, RngStreams, Stream, Tensor, Var};
use crate::text_encoder::TokenSeq;
use crate::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub path: String,
    pub max_rel_err: f64,
}

/// `Σ v ⊙ r` for a fixed random `r`, so that symmetric outputs (e.g. after
/// layer norm) do not cancel.
fn probe(g: &mut Graph, v: Var, salt: u64) -> Result<Var> {
    let shape = g.shape(v).to_vec();
    let n: usize = shape.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE ^ salt);
    let r = Tensor::new(&shape, (0..n).map(|_| StandardNormal.sample(&mut rng)).collect())?;
    let r = g.constant(r);
    let m = g.mul(v, r)?;
    Ok(g.sum(m)?)
}

struct Case {
    model: ImagiT,
    cfg: RunConfig,
    store: ParameterStore,
    src: TokenSeq,
    tgt: TokenSeq,
    image: Tensor,
    noise: Noise,
}

impl Case {
    fn new(seed: u64) -> Result<Self> {
        let cfg = RunConfig::desk();
        let model = ImagiT::new(&cfg.model, 20, 20);
        let store = model.init(seed)?;
        let s = RngStreams::new(seed);
        let noise = Noise::sample(&cfg.model, &mut s.substream(Stream::NoiseZ, 0), &mut s.substream(Stream::CaEpsilon, 0));
        let r = cfg.model.image_size;
        let mut rng = s.substream(Stream::Data, 0);
        let image = Tensor::new(&[3, r, r], (0..3 * r * r).map(|_| libm::tanh(StandardNormal.sample(&mut rng))).collect())?;
        Ok(Self { model, cfg, store, src: TokenSeq::new(alloc::vec![5, 6, 7, 8, 5, 9, 10]), tgt: TokenSeq::new(alloc::vec![5, 6, 7, 5, 9, 10, 8]), image, noise })
    }

    fn check(&self, path: &str, prefixes: &[&str], opts: GradCheck, f: impl Fn(&Self, &mut Fwd) -> Result<Var>) -> Result<GradReport> {
        let policy = GradPolicy::only(prefixes);
        let err = grad_check_store(
            |g: &mut Graph, s: &ParameterStore, p: &GradPolicy| {
                let mut fwd = Fwd::new(g, s, p);
                f(self, &mut fwd)
            },
            &self.store,
            &policy,
            opts,
        )?;
        Ok(GradReport { path: path.to_string(), max_rel_err: err })
    }
}

/// Gradient checks for the encoder, conditioning augmentation (frozen noise),
/// F0, word attention, F1 and the RGB head, aggregation, decoder, both
/// discriminator heads, and the captioning loss into `f1`. Runs at the desk
/// configuration with parameters drawn from `seed`.
pub fn gradient_suite(seed: u64, opts: GradCheck) -> Result<Vec<GradReport>> {
    let c = Case::new(seed)?;
    let mut out = Vec::new();
    out.push(c.check("encoder", &["encoder."], opts, |c, f| {
        let enc = c.model.encoder.encode(f, &c.src)?;
        probe(f.g, enc.all, 1)
    })?);
    out.push(c.check("conditioning_augmentation", &["imagination.ca."], opts, |c, f| {
        let enc = c.model.encoder.encode(f, &c.src)?;
        let ca = c.model.imagination.condition_augment(f, enc.s, &c.noise.eps)?;
        let p = probe(f.g, ca.s_ca, 2)?;
        let kl = c.model.imagination.kl(f, &ca)?;
        Ok(f.g.add(p, kl)?)
    })?);
    let imagined = |c: &Case, f: &mut Fwd| {
        let enc = c.model.encoder.encode(f, &c.src)?;
        c.model.imagination.forward(f, &enc, &c.noise)
    };
    out.push(c.check("f0", &["imagination.f0."], opts, |c, f| {
        let im = imagined(c, f)?;
        probe(f.g, im.f0, 3)
    })?);
    out.push(c.check("word_attention", &["imagination.u0."], opts, |c, f| {
        let im = imagined(c, f)?;
        probe(f.g, im.context, 4)
    })?);
    out.push(c.check("f1", &["imagination.f1."], opts, |c, f| {
        let im = imagined(c, f)?;
        probe(f.g, im.f1, 5)
    })?);
    out.push(c.check("rgb", &["imagination.rgb."], opts, |c, f| {
        let im = imagined(c, f)?;
        probe(f.g, im.image, 6)
    })?);
    out.push(c.check("aggregation", &["aggregation."], opts, |c, f| {
        let pass = c.model.generator_pass(f, &c.src, Some(&c.noise))?;
        probe(f.g, pass.memory.rows, 7)
    })?);
    out.push(c.check("decoder", &["decoder."], opts, |c, f| {
        let pass = c.model.generator_pass(f, &c.src, Some(&c.noise))?;
        Ok(c.model.decoder.translation_loss(f, &pass.memory, &c.tgt, c.cfg.loss.label_smoothing)?.0)
    })?);
    let disc_case = |c: &Case, f: &mut Fwd| -> Result<((Var, Var), (Var, Var))> {
        let pass = c.model.generator_pass(f, &c.src, Some(&c.noise))?;
        let im = pass.imagined.expect("imagination enabled");
        let real = f.g.constant(c.image.clone());
        Ok((c.model.disc.discriminate(f, real, pass.enc.s)?, c.model.disc.discriminate(f, im.image, pass.enc.s)?))
    };
    out.push(c.check("disc_unconditional", &["disc.conv", "disc.uncond."], opts, |c, f| {
        let ((ru, _), (fu, _)) = disc_case(c, f)?;
        let a = f.g.log_clamped(ru, c.cfg.loss.log_floor)?;
        let b = f.g.log_clamped(fu, c.cfg.loss.log_floor)?;
        Ok(f.g.sub(a, b)?)
    })?);
    out.push(c.check("disc_conditional", &["disc.cond."], opts, |c, f| {
        let ((_, rc), (_, fc)) = disc_case(c, f)?;
        let a = f.g.log_clamped(rc, c.cfg.loss.log_floor)?;
        let b = f.g.log_clamped(fc, c.cfg.loss.log_floor)?;
        Ok(f.g.sub(a, b)?)
    })?);
    out.push(c.check("disc_loss", &["disc."], opts, |c, f| {
        let (real, fake) = disc_case(c, f)?;
        discriminator_loss(f.g, &[real], &[fake], c.cfg.loss.log_floor)
    })?);
    out.push(c.check("caption_loss_into_imagination", &["imagination.f1.", "imagination.u0."], opts, |c, f| {
        let im = imagined(c, f)?;
        c.model.captioner.caption_loss(f, im.f1, &c.src.real_ids())
    })?);

    // the same loss taken directly w.r.t. the f1 tensor, with the captioner frozen
    let f1 = {
        let mut g = Graph::new();
        let mut f = Fwd::new(&mut g, &c.store, &GradPolicy::None);
        let im = imagined(&c, &mut f)?;
        g.value(im.f1).clone()
    };
    let src = c.src.real_ids();
    let err = grad_check(
        |g: &mut Graph, v: &[Var]| -> Result<Var> {
            let mut f = Fwd::new(g, &c.store, &GradPolicy::None);
            c.model.captioner.caption_loss(&mut f, v[0], &src)
        },
        &[f1],
        opts,
    )?;
    out.push(GradReport { path: "caption_loss_wrt_f1".to_string(), max_rel_err: err });
    Ok(out)
}
