//! Named-tensor container.
//!
//! ```text
//! b"EEGAPARM"  u32 version  u32 tensor-count
//! per tensor:  u32 name-length  name (utf-8)  u32 ndim  u64 dims[ndim]  f64 data[..]
//! ```
//!
//! All integers and floats little-endian; data in row-major order.

use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"EEGAPARM";
const VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, ArrayD<f64>)>,
}

impl Checkpoint {
    pub fn push(&mut self, name: &str, tensor: ArrayD<f64>) {
        self.tensors.push((name.to_string(), tensor));
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<f64>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, tensor) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(tensor.ndim() as u32).to_le_bytes());
            for &d in tensor.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in tensor.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut reader = Reader { bytes, pos: 0 };
        if reader.take(8)? != MAGIC {
            return Err(Error::Encoding("not a checkpoint file (bad magic)".into()));
        }
        let version = reader.u32()?;
        if version != VERSION {
            return Err(Error::Encoding(format!("unsupported checkpoint version {version}")));
        }
        let count = reader.u32()?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let len = reader.u32()? as usize;
            let name = std::str::from_utf8(reader.take(len)?)
                .map_err(|_| Error::Encoding("tensor name is not utf-8".into()))?
                .to_string();
            let ndim = reader.u32()? as usize;
            let shape = (0..ndim)
                .map(|_| reader.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let size = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
            let size = size.ok_or_else(|| Error::Encoding(format!("tensor {name} too large")))?;
            let data = reader
                .take(size.checked_mul(8).ok_or_else(|| Error::Encoding(format!("tensor {name} too large")))?)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let tensor = ArrayD::from_shape_vec(IxDyn(&shape), data).expect("size checked");
            tensors.push((name, tensor));
        }
        if reader.pos != bytes.len() {
            return Err(Error::Encoding("trailing bytes after checkpoint".into()));
        }
        Ok(Self { tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Encoding("checkpoint truncated".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
