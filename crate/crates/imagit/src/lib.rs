//! File formats, training loops and reports around `imagit-core`.

use std::path::{Path, PathBuf};

pub mod checkpoint;
pub mod config_file;
pub mod corpus;
pub mod metrics;
pub mod parallel;
pub mod ppm;
pub mod run_manifest;
pub mod training;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] imagit_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("config: {0}")]
    Toml(String),
    #[error("{0} already exists (pass --force to overwrite)")]
    Exists(PathBuf),
    #[error("missing {what}: {path}")]
    Missing { what: &'static str, path: PathBuf },
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }
}

impl From<imagit_core::numerics::NumericsError> for Error {
    fn from(e: imagit_core::numerics::NumericsError) -> Self {
        Self::Core(e.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Refuse to reuse `out` unless `force`; with `force` an existing directory is removed.
pub fn prepare_out_dir(out: &Path, force: bool) -> Result<()> {
    if out.exists() {
        if !force {
            return Err(Error::Exists(out.to_path_buf()));
        }
        if out.is_dir() {
            std::fs::remove_dir_all(out).map_err(|e| Error::io(out, e))?;
        } else {
            std::fs::remove_file(out).map_err(|e| Error::io(out, e))?;
        }
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

/// Refuse to overwrite the file `out` unless `force`.
pub fn check_out_file(out: &Path, force: bool) -> Result<()> {
    if out.exists() && !force {
        return Err(Error::Exists(out.to_path_buf()));
    }
    Ok(())
}
