//! CSV logs.
//!
//! `metrics.csv`: `step,l_trans,l_i2t,l_g0,l_g,l_d,lr_translation,lr_gan`,
//! one row per training step.
//!
//! `epochs.csv`: `epoch,step,dev_bleu,train_bleu`; BLEU columns are empty when
//! not measured.

use std::path::Path;

use imagit_core::adversarial::StepReport;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub l_trans: f64,
    pub l_i2t: f64,
    pub l_g0: f64,
    pub l_g: f64,
    pub l_d: f64,
    pub lr_translation: f64,
    pub lr_gan: f64,
}

impl From<&StepReport> for MetricsRow {
    fn from(r: &StepReport) -> Self {
        Self {
            step: r.step,
            l_trans: r.losses.l_trans,
            l_i2t: r.losses.l_i2t,
            l_g0: r.losses.l_g0,
            l_g: r.losses.l_g,
            l_d: r.losses.l_d,
            lr_translation: r.lr_translation,
            lr_gan: r.lr_gan,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: u64,
    pub step: u64,
    pub dev_bleu: Option<f64>,
    pub train_bleu: Option<f64>,
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Append rows, writing the header only when the file is new or empty.
pub fn append_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = std::fs::OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
