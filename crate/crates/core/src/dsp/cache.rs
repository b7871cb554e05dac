//! `MFC1` feature cache: 4-byte magic, `u32` channels, coeffs, frames
//! (little-endian), then row-major little-endian `f32` values.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{DspError, FeatureMap, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"MFC1";
const HEADER_LEN: usize = 16;

pub fn encode_feature_map(fm: &FeatureMap) -> Result<Vec<u8>> {
    let [c, k, t] = fm.shape();
    if fm.data.len() != c * k * t {
        return Err(DspError::DimensionMismatch(format!(
            "{} values for shape ({c}, {k}, {t})",
            fm.data.len()
        )));
    }
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * fm.data.len());
    buf.extend_from_slice(FEATURE_MAGIC);
    for d in [c, k, t] {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in &fm.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    Ok(buf)
}

pub fn decode_feature_map(buf: &[u8], source: &str) -> Result<FeatureMap> {
    if buf.len() < HEADER_LEN {
        if buf.len() >= 4 && &buf[..4] != FEATURE_MAGIC {
            return Err(DspError::BadMagic([buf[0], buf[1], buf[2], buf[3]]));
        }
        return Err(DspError::Truncated {
            expected: HEADER_LEN,
            actual: buf.len(),
        });
    }
    if &buf[..4] != FEATURE_MAGIC {
        return Err(DspError::BadMagic([buf[0], buf[1], buf[2], buf[3]]));
    }
    let dim = |i: usize| u32::from_le_bytes(buf[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (c, k, t) = (dim(0), dim(1), dim(2));
    let expected = c
        .checked_mul(k)
        .and_then(|v| v.checked_mul(t))
        .and_then(|v| v.checked_mul(4))
        .and_then(|v| v.checked_add(HEADER_LEN))
        .ok_or_else(|| DspError::DimensionMismatch(format!("({c}, {k}, {t}) overflows")))?;
    if buf.len() < expected {
        return Err(DspError::Truncated {
            expected,
            actual: buf.len(),
        });
    }
    if buf.len() > expected {
        return Err(DspError::DimensionMismatch(format!(
            "header ({c}, {k}, {t}) accounts for {expected} bytes but file has {}",
            buf.len()
        )));
    }
    let data = buf[HEADER_LEN..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Ok(FeatureMap {
        source: source.to_string(),
        channels: c,
        coeffs: k,
        frames: t,
        data,
    })
}

/// Writes to a sibling temp file and renames it into place.
pub fn write_feature_cache(fm: &FeatureMap, path: &Path) -> Result<()> {
    let buf = encode_feature_map(fm)?;
    let tmp = path.with_extension("mfc.tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&buf)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_feature_cache(path: &Path) -> Result<FeatureMap> {
    let buf = fs::read(path)?;
    let source = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    decode_feature_map(&buf, &source)
}
