//! TOML run configuration.
//!
//! A file names a `preset` and may override any field of it; unspecified
//! fields keep the preset value.

use std::path::Path;

use imagit_core::config::{Preset, RunConfig};
use sha2::{Digest, Sha256};
use toml::Value;

use crate::{Error, Result};

fn merge(base: &mut Value, over: Value, path: &str) -> Result<()> {
    match (base, over) {
        (Value::Table(b), Value::Table(o)) => {
            for (k, v) in o {
                let here = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v, &here)?,
                    None => return Err(Error::Toml(format!("unknown field `{here}`"))),
                }
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v;
            Ok(())
        }
    }
}

/// Parse a configuration: preset defaults, then the file's overrides.
pub fn parse(text: &str) -> Result<RunConfig> {
    let over: Value = toml::from_str(text).map_err(|e| Error::Toml(e.to_string()))?;
    let preset = match over.get("preset") {
        None => Preset::Desk,
        Some(p) => p.clone().try_into().map_err(|e: toml::de::Error| Error::Toml(format!("preset: {e}")))?,
    };
    let mut base = Value::try_from(RunConfig::preset(preset)).map_err(|e| Error::Toml(e.to_string()))?;
    merge(&mut base, over, "")?;
    let cfg: RunConfig = base.try_into().map_err(|e: toml::de::Error| Error::Toml(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn to_toml(cfg: &RunConfig) -> Result<String> {
    cfg.validate()?;
    toml::to_string(cfg).map_err(|e| Error::Toml(e.to_string()))
}

/// SHA-256 of the canonical TOML text, lower-case hex.
pub fn config_hash(cfg: &RunConfig) -> Result<String> {
    let digest = Sha256::digest(to_toml(cfg)?.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

pub fn load(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text)
}

/// Desk preset when `path` is `None`.
pub fn load_or_default(path: Option<&Path>) -> Result<RunConfig> {
    path.map_or_else(|| Ok(RunConfig::desk()), load)
}

pub fn save(path: &Path, cfg: &RunConfig) -> Result<()> {
    std::fs::write(path, to_toml(cfg)?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_both_presets() {
        for cfg in [RunConfig::desk(), RunConfig::paper()] {
            assert_eq!(parse(&to_toml(&cfg).unwrap()).unwrap(), cfg);
        }
    }

    #[test]
    fn overrides_and_rejections() {
        let cfg = parse("preset = \"paper\"\n[loss]\nlambda1 = 5.0\n").unwrap();
        assert_eq!(cfg.loss.lambda1, 5.0);
        assert_eq!(cfg.model.d_model, 512);
        assert!(parse("[loss]\nlamda1 = 5.0\n").unwrap_err().to_string().contains("loss.lamda1"));
        assert!(parse("[model]\nheads = 3\n").is_err());
        assert_ne!(config_hash(&RunConfig::desk()).unwrap(), config_hash(&RunConfig::paper()).unwrap());
    }
}
