//! Parameter file: `TAGG1` followed by records of
//! `name_len:u32 | name:utf8 | rank:u32 | extents:u32*rank | data:f32*n`,
//! all little-endian, until end of file.

use std::fs;
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"TAGG1";

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor<f32>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, tensor: Tensor<f32>) -> Self {
        NamedTensor {
            name: name.into(),
            tensor,
        }
    }
}

pub fn encode_checkpoint(entries: &[NamedTensor]) -> Vec<u8> {
    let mut out = CHECKPOINT_MAGIC.to_vec();
    for e in entries {
        out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.extend_from_slice(&(e.tensor.rank() as u32).to_le_bytes());
        for &d in e.tensor.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in e.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn write_checkpoint(path: &Path, entries: &[NamedTensor]) -> Result<()> {
    fs::write(path, encode_checkpoint(entries)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<NamedTensor>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    file: &'a Path,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize, field: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.file,
                field,
                self.pos as u64,
                format!("need {n} bytes, {} left", self.bytes.len() - self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        let b = self.take(4, field)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode_checkpoint(bytes: &[u8], file: &Path) -> Result<Vec<NamedTensor>> {
    let mut cur = Cursor { bytes, pos: 0, file };
    if cur.take(CHECKPOINT_MAGIC.len(), "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::format(file, "magic", 0, "expected TAGG1"));
    }
    let mut entries = Vec::new();
    while cur.pos < bytes.len() {
        let name_len = cur.u32("name length")? as usize;
        let at = cur.pos as u64;
        let name = std::str::from_utf8(cur.take(name_len, "name")?)
            .map_err(|e| Error::format(file, "name", at, e.to_string()))?
            .to_owned();
        let rank = cur.u32(&format!("{name}: rank"))? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32(&format!("{name}: extent"))? as usize);
        }
        let at = cur.pos as u64;
        let n: usize = shape.iter().product();
        let raw = cur.take(n * 4, &format!("{name}: data"))?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let tensor = Tensor::new(&shape, data)
            .map_err(|e| Error::format(file, format!("{name}: shape"), at, e.to_string()))?;
        entries.push(NamedTensor { name, tensor });
    }
    Ok(entries)
}
