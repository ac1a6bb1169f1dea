//! The `SKDF` checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      4 bytes  "SKDF"
//! version    u32
//! digest     32 bytes SHA-256 of the config JSON
//! config     u32 length + UTF-8 JSON
//! count      u32 number of arrays
//! per array: u32 name length, UTF-8 name, u32 rank, rank × u64 dims,
//!            product(dims) × f32 payload (row-major)
//! ```
//!
//! Arrays are stored as `f32`; values that are already `f32`-representable
//! survive a save/load cycle bit for bit.

use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayD, IxDyn};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SKDF";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_json: String,
    pub arrays: Vec<(String, ArrayD<f64>)>,
}

pub fn config_digest(config_json: &str) -> String {
    hex::encode(Sha256::digest(config_json.as_bytes()))
}

impl Checkpoint {
    pub fn new(config_json: String) -> Self {
        Self {
            config_json,
            arrays: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, array: ArrayD<f64>) {
        self.arrays.push((name.into(), array));
    }

    pub fn push_matrix(&mut self, name: impl Into<String>, m: &Array2<f64>) {
        self.push(name, m.clone().into_dyn());
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<f64>> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, a)| a)
    }

    pub fn matrix(&self, name: &str) -> Result<Array2<f64>> {
        let a = self
            .get(name)
            .ok_or_else(|| Error::Data(format!("checkpoint is missing array `{name}`")))?;
        a.clone()
            .into_dimensionality()
            .map_err(|_| Error::Shape(format!("array `{name}` is not rank 2")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&Sha256::digest(self.config_json.as_bytes()));
        out.extend_from_slice(&(self.config_json.len() as u32).to_le_bytes());
        out.extend_from_slice(self.config_json.as_bytes());
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for (name, array) in &self.arrays {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(array.ndim() as u32).to_le_bytes());
            for &d in array.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in array.as_standard_layout().iter() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err("bad magic bytes".into());
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(format!("unsupported version {version}"));
        }
        let digest = r.take(32)?.to_vec();
        let len = r.u32()? as usize;
        let config_json = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| "config is not UTF-8".to_string())?;
        if Sha256::digest(config_json.as_bytes()).as_slice() != digest.as_slice() {
            return Err("config digest mismatch".into());
        }
        let count = r.u32()? as usize;
        let mut arrays = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| "array name is not UTF-8".to_string())?;
            let rank = r.u32()? as usize;
            let dims = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let n: usize = dims.iter().product();
            let payload = r.take(n.checked_mul(4).ok_or("array too large")?)?;
            let data: Vec<f64> = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            let array = ArrayD::from_shape_vec(IxDyn(&dims), data).map_err(|e| e.to_string())?;
            arrays.push((name, array));
        }
        if r.pos != bytes.len() {
            return Err(format!("{} trailing bytes", bytes.len() - r.pos));
        }
        Ok(Self {
            config_json,
            arrays,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::motion::dataset::write_bytes(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_bytes(&bytes).map_err(|message| Error::Checkpoint {
            path: path.to_path_buf(),
            message,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(format!("truncated at byte {}", self.pos));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_le_bytes(a))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;

    #[test]
    fn bytes_round_trip() {
        let mut c = Checkpoint::new("{\"a\":1}".into());
        c.push("w", ArrayD::from_shape_vec(IxDyn(&[2, 3]), vec![0.5, -1.0, 2.0, 0.0, 1.25, -0.125]).unwrap());
        c.push("v", arr1(&[3.0]).into_dyn());
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn corruption_detected() {
        let c = Checkpoint::new("{}".into());
        let mut bytes = c.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        bytes[0] = b'X';
        assert!(Checkpoint::from_bytes(&bytes).is_err());
        let mut bytes = c.to_bytes();
        bytes[8] ^= 1;
        assert!(Checkpoint::from_bytes(&bytes).is_err());
    }
}
