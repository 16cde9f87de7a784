//! The imagination network: conditioning augmentation, the F0/F1 converters,
//! word-context attention, and a to-RGB head for the discriminator.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::config::ModelConfig;
use crate::nn::{instance_norm, Conv2d, ConvTranspose2d, Fwd, Linear};
use crate::numerics::{NumericsError, ParameterStore, Tensor, Var};
use crate::text_encoder::EncodedSource;
use crate::{Error, Result};

/// Conditioning-augmented sentence vector, `s_ca = mu + exp(logvar/2) ⊙ eps`.
#[derive(Clone, Debug)]
pub struct CaResult {
    pub s_ca: Var,
    pub mu: Var,
    pub logvar: Var,
    pub eps: Vec<f64>,
}

/// The two noise draws consumed by one imagination pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Noise {
    pub z: Vec<f64>,
    pub eps: Vec<f64>,
}

impl Noise {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        Self { z: vec![0.0; cfg.dz], eps: vec![0.0; cfg.d_ca] }
    }

    /// `z` from the noise-z stream, `eps` from the ca-epsilon stream.
    pub fn sample(cfg: &ModelConfig, z_rng: &mut ChaCha8Rng, eps_rng: &mut ChaCha8Rng) -> Self {
        Self {
            z: (0..cfg.dz).map(|_| z_rng.sample(StandardNormal)).collect(),
            eps: (0..cfg.d_ca).map(|_| eps_rng.sample(StandardNormal)).collect(),
        }
    }
}

/// Every intermediate of one imagination pass. Feature maps are `[C, r, r]`;
/// use [`grid`] for the `C × N` column view.
#[derive(Clone, Debug)]
pub struct Imagined {
    pub ca: CaResult,
    pub f0: Var,
    pub context: Var,
    /// Word-over-subregion attention, `L × N0`.
    pub attention: Var,
    pub f1: Var,
    pub image: Var,
}

/// `[C, r, r]` → `C × r²`.
pub fn grid(f: &mut Fwd, x: Var) -> Result<Var> {
    let shape = f.g.shape(x).to_vec();
    let n = shape[1..].iter().product::<usize>();
    Ok(f.g.reshape(x, &[shape[0], n])?)
}

#[derive(Clone, Debug)]
struct Residual {
    c1: Conv2d,
    c2: Conv2d,
}

#[derive(Clone, Debug)]
pub struct Imagination {
    ca: Linear,
    fc: Linear,
    blocks: Vec<ConvTranspose2d>,
    u0: Linear,
    joint: Conv2d,
    residual: Vec<Residual>,
    up: Conv2d,
    rgb: Conv2d,
    d_ca: usize,
    dz: usize,
    c0: usize,
    seed: usize,
    rgb_factor: usize,
}

impl Imagination {
    pub fn new(cfg: &ModelConfig) -> Self {
        let c0 = cfg.c0;
        let blocks = cfg
            .f0_strides()
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let (k, p) = if s == 2 { (4, 1) } else { (3, 1) };
                ConvTranspose2d::new(&format!("imagination.f0.block{i}"), c0, c0, k, s, p)
            })
            .collect();
        let residual = (0..cfg.residual_blocks)
            .map(|i| Residual {
                c1: Conv2d::new(&format!("imagination.f1.res{i}.conv1"), c0, c0, 3, 1, 1, false),
                c2: Conv2d::new(&format!("imagination.f1.res{i}.conv2"), c0, c0, 3, 1, 1, false),
            })
            .collect();
        Self {
            ca: Linear::new("imagination.ca", true),
            fc: Linear::new("imagination.f0.fc", true),
            blocks,
            u0: Linear::new("imagination.u0", false),
            joint: Conv2d::new("imagination.f1.joint", 2 * c0, c0, 3, 1, 1, false),
            residual,
            up: Conv2d::new("imagination.f1.up", c0, cfg.c1, 3, 1, 1, true),
            rgb: Conv2d::new("imagination.rgb", cfg.c1, 3, 1, 1, 0, true),
            d_ca: cfg.d_ca,
            dz: cfg.dz,
            c0,
            seed: cfg.f0_seed,
            rgb_factor: cfg.image_size / cfg.f1_grid(),
        }
    }

    pub fn init(&self, store: &mut ParameterStore, d: usize, rng: &mut ChaCha8Rng) -> Result<()> {
        self.ca.init(store, d, 2 * self.d_ca, rng)?;
        self.fc.init(store, self.dz + self.d_ca, self.c0 * self.seed * self.seed, rng)?;
        for b in &self.blocks {
            b.init(store, rng)?;
        }
        self.u0.init(store, d, self.c0, rng)?;
        self.joint.init(store, rng)?;
        for r in &self.residual {
            r.c1.init(store, rng)?;
            r.c2.init(store, rng)?;
        }
        self.up.init(store, rng)?;
        self.rgb.init(store, rng)
    }

    /// `mu, logvar = affine(s)`, then reparameterise with the given noise.
    pub fn condition_augment(&self, f: &mut Fwd, s: Var, eps: &[f64]) -> Result<CaResult> {
        let h = self.ca.forward(f, s)?;
        let mu = f.g.slice_cols(h, 0, self.d_ca)?;
        let logvar = f.g.slice_cols(h, self.d_ca, self.d_ca)?;
        let s_ca = f.g.reparameterize(mu, logvar, eps)?;
        Ok(CaResult { s_ca, mu, logvar, eps: eps.to_vec() })
    }

    /// `KL(N(mu, σ²) ‖ N(0, I)) = ½ Σ (σ² + mu² − 1 − logvar)`.
    pub fn kl(&self, f: &mut Fwd, ca: &CaResult) -> Result<Var> {
        let var = f.g.exp(ca.logvar)?;
        let mu2 = f.g.mul(ca.mu, ca.mu)?;
        let t = f.g.add(var, mu2)?;
        let t = f.g.sub(t, ca.logvar)?;
        let t = f.g.sum(t)?;
        let t = f.g.add_scalar(t, -(self.d_ca as f64))?;
        Ok(f.g.scale(t, 0.5)?)
    }

    /// `f0 = F0([z; s_ca])`, returned as `[c0, g, g]`.
    pub fn generate_f0(&self, f: &mut Fwd, z: &[f64], s_ca: Var) -> Result<Var> {
        let z = f.g.constant(Tensor::new(&[1, z.len()], z.to_vec())?);
        let x = f.g.concat_cols(&[z, s_ca])?;
        let h = self.fc.forward(f, x)?;
        let mut h = f.g.reshape(h, &[self.c0, self.seed, self.seed])?;
        for b in &self.blocks {
            h = b.forward(f, h)?;
            h = instance_norm(f, h)?;
            h = f.g.relu(h)?;
        }
        Ok(h)
    }

    /// Word-context feature `Σ_l (U0 w_l) softmax(f0ᵀ U0 w_l)ᵀ`, with the softmax
    /// over subregions for each word. Returns `(context [c0, g, g], α: L × N0)`.
    pub fn word_context(&self, f: &mut Fwd, f0: Var, w: Var) -> Result<(Var, Var)> {
        if f.g.shape(w)[0] == 0 {
            return Err(Error::EmptySentence);
        }
        let shape = f.g.shape(f0).to_vec();
        let f0g = grid(f, f0)?;
        let e = self.u0.forward(f, w)?;
        let scores = f.g.matmul(e, f0g)?;
        let alpha = f.g.softmax(scores)?;
        let ctx = f.g.matmul_t(e, true, alpha, false)?;
        Ok((f.g.reshape(ctx, &shape)?, alpha))
    }

    /// `f1 = F1(f0, context)`, returned as `[c1, 2g, 2g]`.
    pub fn generate_f1(&self, f: &mut Fwd, f0: Var, context: Var) -> Result<Var> {
        if f.g.shape(f0) != f.g.shape(context) {
            return Err(NumericsError::ShapeMismatch {
                op: "generate_f1",
                lhs: f.g.shape(f0).to_vec(),
                rhs: f.g.shape(context).to_vec(),
            }
            .into());
        }
        let x = f.g.concat_rows(&[f0, context])?;
        let x = self.joint.forward(f, x)?;
        let x = instance_norm(f, x)?;
        let mut h = f.g.relu(x)?;
        for r in &self.residual {
            let y = r.c1.forward(f, h)?;
            let y = instance_norm(f, y)?;
            let y = f.g.relu(y)?;
            let y = r.c2.forward(f, y)?;
            let y = instance_norm(f, y)?;
            h = f.g.add(h, y)?;
        }
        let h = f.g.nearest_upsample(h, 2)?;
        let h = self.up.forward(f, h)?;
        Ok(f.g.tanh(h)?)
    }

    /// 1×1 convolution to three channels, tanh, then nearest upsampling to the image side.
    pub fn to_rgb(&self, f: &mut Fwd, f1: Var) -> Result<Var> {
        let x = self.rgb.forward(f, f1)?;
        let x = f.g.tanh(x)?;
        if self.rgb_factor > 1 {
            Ok(f.g.nearest_upsample(x, self.rgb_factor)?)
        } else {
            Ok(x)
        }
    }

    pub fn forward(&self, f: &mut Fwd, enc: &EncodedSource, noise: &Noise) -> Result<Imagined> {
        let ca = self.condition_augment(f, enc.s, &noise.eps)?;
        let f0 = self.generate_f0(f, &noise.z, ca.s_ca)?;
        let (context, attention) = self.word_context(f, f0, enc.w)?;
        let f1 = self.generate_f1(f, f0, context)?;
        let image = self.to_rgb(f, f1)?;
        Ok(Imagined { ca, f0, context, attention, f1, image })
    }
}
