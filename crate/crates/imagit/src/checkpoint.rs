//! Binary parameter container.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic     8 bytes   "IMAGITCK"
//! version   u32       1
//! hlen      u32       length of the header in bytes
//! header    hlen      UTF-8 JSON object {"config_hash", "step", "seed"}
//! count     u32       number of entries
//! entry × count, sorted by name:
//!   nlen      u32
//!   name      nlen bytes, UTF-8
//!   trainable u8        0 or 1
//!   ndim      u32
//!   dims      u64 × ndim
//!   values    f64 × product(dims)
//! ```

use std::fs;
use std::path::Path;

use imagit_core::numerics::{ParameterStore, Tensor};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"IMAGITCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config_hash: String,
    pub step: u64,
    pub seed: u64,
}

pub fn encode(header: &CheckpointHeader, store: &ParameterStore) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(64 + store.num_values() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let h = serde_json::to_vec(header)?;
    out.extend_from_slice(&(h.len() as u32).to_le_bytes());
    out.extend_from_slice(&h);
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for p in store.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.push(p.trainable as u8);
        out.extend_from_slice(&(p.tensor.shape().len() as u32).to_le_bytes());
        for &d in p.tensor.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in p.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| Error::Format("checkpoint truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<(CheckpointHeader, ParameterStore)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let hlen = r.u32()? as usize;
    let header: CheckpointHeader = serde_json::from_slice(r.take(hlen)?)?;
    let count = r.u32()?;
    let mut store = ParameterStore::new();
    for _ in 0..count {
        let nlen = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(nlen)?).map_err(|_| Error::Format("parameter name is not UTF-8".into()))?.to_string();
        let trainable = match r.take(1)?[0] {
            0 => false,
            1 => true,
            b => return Err(Error::Format(format!("bad trainable flag {b} for `{name}`"))),
        };
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let tensor = Tensor::new(&shape, data).map_err(imagit_core::Error::from)?;
        store.insert(&name, tensor, trainable).map_err(imagit_core::Error::from)?;
    }
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    Ok((header, store))
}

pub fn save(path: &Path, header: &CheckpointHeader, store: &ParameterStore) -> Result<()> {
    fs::write(path, encode(header, store)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(CheckpointHeader, ParameterStore)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Store built from named vectors, e.g. for feature dumps.
pub fn store_from_rows<'a>(rows: impl IntoIterator<Item = (String, &'a [f64])>) -> Result<ParameterStore> {
    let mut store = ParameterStore::new();
    for (name, v) in rows {
        let tensor = Tensor::new(&[v.len()], v.to_vec()).map_err(imagit_core::Error::from)?;
        store.insert(&name, tensor, false).map_err(imagit_core::Error::from)?;
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut s = ParameterStore::new();
        s.insert("b", Tensor::new(&[2, 1], vec![1.5, -0.25]).unwrap(), false).unwrap();
        s.insert("a", Tensor::scalar(f64::MIN_POSITIVE), true).unwrap();
        let h = CheckpointHeader { config_hash: "abc".into(), step: 7, seed: 3 };
        let bytes = encode(&h, &s).unwrap();
        let (h2, s2) = decode(&bytes).unwrap();
        assert_eq!(h2, h);
        assert_eq!(encode(&h2, &s2).unwrap(), bytes);
        assert!(!s2.get("b").unwrap().trainable);
    }

    #[test]
    fn rejects_truncation() {
        let h = CheckpointHeader { config_hash: String::new(), step: 0, seed: 0 };
        let mut s = ParameterStore::new();
        s.insert("w", Tensor::scalar(1.0), true).unwrap();
        let bytes = encode(&h, &s).unwrap();
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode(b"nonsense").is_err());
    }
}
