//! Named-tensor table on disk.
//!
//! Layout (all integers little-endian):
//! `"TNS1"`, `u32` entry count, then per entry: `u32` name length, UTF-8
//! name, `u32` rank, `rank x u32` dims, `prod(dims) x f32` values.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{numel, Result, TensorError};

pub const TENSOR_MAGIC: &[u8; 4] = b"TNS1";

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedArray {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Self {
        Self {
            name: name.into(),
            shape,
            data,
        }
    }
}

pub fn encode_tensor_table(entries: &[NamedArray]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(TENSOR_MAGIC);
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        if e.data.len() != numel(&e.shape) {
            return Err(TensorError::Format(format!(
                "entry {:?}: {} values for shape {:?}",
                e.name,
                e.data.len(),
                e.shape
            )));
        }
        let name = e.name.as_bytes();
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name);
        buf.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
        for &d in &e.shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &e.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(TensorError::Format(format!(
                "truncated while reading {what} at byte {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn decode_tensor_table(buf: &[u8]) -> Result<Vec<NamedArray>> {
    let mut r = Reader { buf, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != TENSOR_MAGIC {
        return Err(TensorError::Format(format!("bad magic {magic:?}, expected \"TNS1\"")));
    }
    let count = r.u32("entry count")?;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for i in 0..count {
        let len = r.u32("name length")?;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| TensorError::Format(format!("entry {i}: name is not UTF-8")))?
            .to_owned();
        let rank = r.u32("rank")?;
        let mut shape = Vec::with_capacity(rank.min(16));
        for _ in 0..rank {
            shape.push(r.u32("dims")?);
        }
        let n = numel(&shape);
        let raw = r.take(n.checked_mul(4).ok_or_else(|| TensorError::Format("size overflow".into()))?, &name)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        out.push(NamedArray { name, shape, data });
    }
    if r.pos != buf.len() {
        return Err(TensorError::Format(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    Ok(out)
}

/// Writes atomically: a sibling temp file is renamed over `path`.
pub fn write_tensor_table(path: &Path, entries: &[NamedArray]) -> Result<()> {
    let buf = encode_tensor_table(entries)?;
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&buf)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_tensor_table(path: &Path) -> Result<Vec<NamedArray>> {
    decode_tensor_table(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<NamedArray> {
        vec![
            NamedArray::new("stem.conv.weight", vec![2, 1, 1, 1], vec![0.5, -1.25]),
            NamedArray::new("adam.t", vec![], vec![3.0]),
        ]
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.tns");
        write_tensor_table(&p, &sample()).unwrap();
        assert_eq!(read_tensor_table(&p).unwrap(), sample());
    }

    #[test]
    fn corrupt_magic_and_truncation_are_typed_errors() {
        let mut buf = encode_tensor_table(&sample()).unwrap();
        let short = &buf[..buf.len() - 3];
        assert!(matches!(decode_tensor_table(short), Err(TensorError::Format(m)) if m.contains("truncated")));
        buf[0] = b'X';
        assert!(matches!(decode_tensor_table(&buf), Err(TensorError::Format(m)) if m.contains("magic")));
    }
}
