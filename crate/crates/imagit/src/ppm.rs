//! Binary PPM (P6, maxval 255).

use std::path::Path;

use crate::{Error, Result};

pub fn encode(width: usize, height: usize, rgb: &[u8]) -> Result<Vec<u8>> {
    if rgb.len() != width * height * 3 {
        return Err(Error::Format(format!("ppm: expected {} bytes, got {}", width * height * 3, rgb.len())));
    }
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    Ok(out)
}

/// Returns `(width, height, rgb)`.
pub fn decode(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let bad = |m: &str| Error::Format(format!("ppm: {m}"));
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header is not ASCII"))?);
    }
    if fields[0] != "P6" {
        return Err(bad("only P6 is supported"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (w, h, max) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if max != 255 {
        return Err(bad("only maxval 255 is supported"));
    }
    pos += 1;
    let data = bytes.get(pos..).ok_or_else(|| bad("missing pixel data"))?;
    if data.len() != w * h * 3 {
        return Err(bad("pixel data has the wrong length"));
    }
    Ok((w, h, data.to_vec()))
}

pub fn write(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    std::fs::write(path, encode(width, height, rgb)?).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_with_comment() {
        let px: Vec<u8> = (0..2 * 3 * 3).map(|i| i as u8).collect();
        let enc = encode(2, 3, &px).unwrap();
        assert_eq!(decode(&enc).unwrap(), (2, 3, px.clone()));
        let mut commented = b"P6\n# made by hand\n2 3\n255\n".to_vec();
        commented.extend_from_slice(&px);
        assert_eq!(decode(&commented).unwrap(), (2, 3, px));
        assert!(decode(b"P3\n1 1\n255\n").is_err());
    }
}
