//! Run configuration and the `desk` / `paper` presets.

use alloc::format;
use alloc::string::ToString;

use serde::{Deserialize, Serialize};

use crate::numerics::{AdamConfig, Schedule};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Desk,
    Paper,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub heads: usize,
    pub ffn: usize,
    pub dropout: f64,
    pub positional_encoding: bool,
    /// Noise dimension fed to F0.
    pub dz: usize,
    /// Conditioning-augmentation dimension.
    pub d_ca: usize,
    /// Channels of f0.
    pub c0: usize,
    /// Channels of f1.
    pub c1: usize,
    /// Spatial side of the fully-connected seed in F0.
    pub f0_seed: usize,
    /// Spatial side of f0; f1 is twice this.
    pub f0_grid: usize,
    pub residual_blocks: usize,
    /// Side of real and generated RGB images.
    pub image_size: usize,
    pub disc_width: usize,
    pub disc_hidden: usize,
    pub cap_embed: usize,
    pub cap_hidden: usize,
    pub cap_attn: usize,
    pub max_len: usize,
    /// `false` trains the text-only baseline (no visual pseudo-tokens).
    pub imagination: bool,
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn f1_grid(&self) -> usize {
        2 * self.f0_grid
    }

    /// Number of f0 subregions.
    pub fn n0(&self) -> usize {
        self.f0_grid * self.f0_grid
    }

    /// Number of f1 subregions, i.e. visual pseudo-tokens.
    pub fn n1(&self) -> usize {
        self.f1_grid() * self.f1_grid()
    }

    /// Strides of the four F0 blocks: stride 2 until the grid is reached, then 1.
    pub fn f0_strides(&self) -> [usize; 4] {
        let mut side = self.f0_seed;
        let mut out = [1; 4];
        for s in &mut out {
            if side < self.f0_grid {
                *s = 2;
                side *= 2;
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &'static str, reason: &str| Err(Error::Config { field, reason: reason.to_string() });
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return bad("heads", "must divide d_model");
        }
        if self.enc_layers == 0 || self.dec_layers == 0 {
            return bad("enc_layers", "encoder and decoder need at least one layer");
        }
        if self.ffn == 0 || self.dz == 0 || self.d_ca == 0 || self.c0 == 0 || self.c1 == 0 {
            return bad("ffn", "widths must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout", "must lie in [0, 1)");
        }
        if self.f0_seed == 0 || !self.f0_seed.is_power_of_two() || !self.f0_grid.is_power_of_two() {
            return bad("f0_seed", "seed and grid sides must be powers of two");
        }
        let ups = (self.f0_grid / self.f0_seed).trailing_zeros();
        if self.f0_grid < self.f0_seed || ups > 4 {
            return bad("f0_grid", "must be reachable from f0_seed with at most four doublings");
        }
        if self.n1() != 4 * self.n0() {
            return bad("f0_grid", "f1 must have four times as many subregions as f0");
        }
        if self.image_size < 16 || self.image_size % self.f1_grid() != 0 || self.image_size % 8 != 0 {
            return bad("image_size", "must be >= 16, a multiple of 8 and of the f1 grid side");
        }
        if self.disc_width == 0 || self.disc_hidden == 0 || self.cap_hidden == 0 || self.cap_embed == 0 || self.cap_attn == 0 {
            return bad("disc_width", "widths must be positive");
        }
        if self.max_len == 0 {
            return bad("max_len", "must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    /// KL regulariser on conditioning augmentation.
    pub kl: bool,
    pub kl_weight: f64,
    pub label_smoothing: f64,
    /// Probabilities are clamped to this floor before taking logs.
    pub log_floor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_steps: u64,
    pub max_epochs: u64,
    /// Stop when dev BLEU has not improved for this many epochs.
    pub patience_epochs: u64,
    pub warmup_steps: u64,
    pub gan_base_lr: f64,
    pub gan_half_every_epochs: u64,
    /// Discriminator updates per generator update.
    pub d_steps_per_g: usize,
    pub translation_adam: AdamConfig,
    pub gan_adam: AdamConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptionerConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: u64,
    pub patience_epochs: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub preset: Preset,
    pub seed: u64,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub captioner: CaptionerConfig,
}

impl RunConfig {
    /// Small configuration that trains on one CPU core in minutes.
    pub fn desk() -> Self {
        Self {
            preset: Preset::Desk,
            seed: 17,
            model: ModelConfig {
                d_model: 64,
                enc_layers: 2,
                dec_layers: 2,
                heads: 4,
                ffn: 128,
                dropout: 0.0,
                positional_encoding: true,
                dz: 16,
                d_ca: 32,
                c0: 32,
                c1: 16,
                f0_seed: 1,
                f0_grid: 8,
                residual_blocks: 2,
                image_size: 32,
                disc_width: 8,
                disc_hidden: 32,
                cap_embed: 32,
                cap_hidden: 64,
                cap_attn: 32,
                max_len: 12,
                imagination: true,
            },
            loss: LossConfig {
                lambda1: 20.0,
                lambda2: 40.0,
                kl: true,
                kl_weight: 1.0,
                label_smoothing: 0.1,
                log_floor: 1e-7,
            },
            train: TrainConfig {
                batch_size: 16,
                max_steps: 3000,
                max_epochs: 1000,
                patience_epochs: 10,
                warmup_steps: 400,
                gan_base_lr: 2e-4,
                gan_half_every_epochs: 100,
                d_steps_per_g: 1,
                translation_adam: AdamConfig::TRANSFORMER,
                gan_adam: AdamConfig::GAN,
            },
            captioner: CaptionerConfig { lr: 2e-3, batch_size: 16, max_epochs: 60, patience_epochs: 10 },
        }
    }

    /// Full-size hyperparameters.
    pub fn paper() -> Self {
        Self {
            preset: Preset::Paper,
            seed: 17,
            model: ModelConfig {
                d_model: 512,
                enc_layers: 6,
                dec_layers: 6,
                heads: 8,
                ffn: 2048,
                dropout: 0.1,
                positional_encoding: true,
                dz: 100,
                d_ca: 256,
                c0: 64,
                c1: 32,
                f0_seed: 4,
                f0_grid: 64,
                residual_blocks: 2,
                image_size: 128,
                disc_width: 64,
                disc_hidden: 512,
                cap_embed: 256,
                cap_hidden: 512,
                cap_attn: 256,
                max_len: 80,
                imagination: true,
            },
            loss: LossConfig {
                lambda1: 20.0,
                lambda2: 40.0,
                kl: true,
                kl_weight: 1.0,
                label_smoothing: 0.1,
                log_floor: 1e-7,
            },
            train: TrainConfig {
                batch_size: 64,
                max_steps: 10_000,
                max_epochs: 600,
                patience_epochs: 10,
                warmup_steps: 8000,
                gan_base_lr: 2e-4,
                gan_half_every_epochs: 100,
                d_steps_per_g: 1,
                translation_adam: AdamConfig::TRANSFORMER,
                gan_adam: AdamConfig::GAN,
            },
            captioner: CaptionerConfig { lr: 2e-4, batch_size: 64, max_epochs: 600, patience_epochs: 10 },
        }
    }

    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Desk => Self::desk(),
            Preset::Paper => Self::paper(),
        }
    }

    pub fn translation_schedule(&self) -> Schedule {
        Schedule::TransformerWarmup { d_model: self.model.d_model, warmup_steps: self.train.warmup_steps }
    }

    pub fn gan_schedule(&self) -> Schedule {
        Schedule::Halving { base_lr: self.train.gan_base_lr, half_every_epochs: self.train.gan_half_every_epochs }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let bad = |field: &'static str, reason: &str| Err(Error::Config { field, reason: reason.to_string() });
        if self.seed > i64::MAX as u64 {
            return bad("seed", "must fit in a signed 64-bit integer");
        }
        if self.loss.lambda1 < 0.0 || self.loss.lambda2 < 0.0 {
            return bad("lambda1", "loss weights must be non-negative");
        }
        if !(0.0..1.0).contains(&self.loss.label_smoothing) {
            return bad("label_smoothing", "must lie in [0, 1)");
        }
        if !(self.loss.log_floor > 0.0 && self.loss.log_floor < 0.5) {
            return bad("log_floor", "must lie in (0, 0.5)");
        }
        if self.train.batch_size == 0 || self.captioner.batch_size == 0 {
            return bad("batch_size", "must be positive");
        }
        if self.train.warmup_steps == 0 {
            return bad("warmup_steps", "must be positive");
        }
        if self.train.gan_half_every_epochs == 0 {
            return bad("gan_half_every_epochs", "must be positive");
        }
        if self.train.d_steps_per_g == 0 {
            return bad("d_steps_per_g", "must be positive");
        }
        if self.train.gan_base_lr <= 0.0 || self.captioner.lr <= 0.0 {
            return bad("gan_base_lr", &format!("learning rates must be positive, got {}", self.train.gan_base_lr));
        }
        Ok(())
    }
}
