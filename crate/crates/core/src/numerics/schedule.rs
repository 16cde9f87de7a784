use serde::{Deserialize, Serialize};

use super::NumericsError;

/// Learning-rate schedules.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    /// `d_model^-0.5 · min(step^-0.5, step · warmup^-1.5)`
    TransformerWarmup { d_model: usize, warmup_steps: u64 },
    /// `base_lr · 0.5^floor((epoch − 1) / half_every_epochs)`: epochs
    /// `1..=half_every_epochs` run at `base_lr`.
    Halving { base_lr: f64, half_every_epochs: u64 },
}

impl Schedule {
    /// Learning rate at a 1-based step (warmup) or epoch (halving).
    pub fn lr(&self, step: u64) -> Result<f64, NumericsError> {
        if step == 0 {
            return Err(NumericsError::ZeroStep);
        }
        Ok(match *self {
            Self::TransformerWarmup { d_model, warmup_steps } => {
                let s = step as f64;
                let decay = 1.0 / libm::sqrt(s);
                let warm = s * libm::pow(warmup_steps as f64, -1.5);
                (1.0 / libm::sqrt(d_model as f64)) * if decay < warm { decay } else { warm }
            }
            Self::Halving { base_lr, half_every_epochs } => {
                let halvings = (step - 1) / half_every_epochs.max(1);
                base_lr * libm::pow(0.5, halvings as f64)
            }
        })
    }
}
