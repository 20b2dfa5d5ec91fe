//! FTNS binary tensors.
//!
//! Layout, all little-endian:
//!
//! ```text
//! b"FTNS" | u32 version (=1) | u32 ndim | ndim × u64 dims | f32 payload (row-major)
//! ```

use std::fs;
use std::path::Path;

use crate::error::{FrescoError, Result};
use crate::scalar::Real;
use crate::tensor::Grid;

pub const MAGIC: &[u8; 4] = b"FTNS";
pub const VERSION: u32 = 1;

/// A decoded FTNS tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(FrescoError::contract(format!(
                "tensor dims {dims:?} need {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn from_grid<T: Real>(g: &Grid<T>) -> Self {
        Self {
            dims: vec![g.height(), g.width(), g.channels()],
            data: g.data().iter().map(|v| v.to_f64_lossy() as f32).collect(),
        }
    }

    /// Interpret a rank-3 (`h × w × c`) or rank-2 (`h × w`, one channel)
    /// tensor as a grid.
    pub fn to_grid<T: Real>(&self) -> Result<Grid<T>> {
        let (h, w, c) = match self.dims.as_slice() {
            [h, w] => (*h, *w, 1),
            [h, w, c] => (*h, *w, *c),
            d => return Err(FrescoError::format(format!("expected rank 2 or 3 tensor, got dims {d:?}"))),
        };
        Grid::from_vec(h, w, c, self.data.iter().map(|&v| T::lit(v as f64)).collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 8 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = bytes;
        let mut take = |n: usize, what: &str| -> Result<&[u8]> {
            if cur.len() < n {
                return Err(FrescoError::format(format!("truncated FTNS tensor while reading {what}")));
            }
            let (head, tail) = cur.split_at(n);
            cur = tail;
            Ok(head)
        };
        if take(4, "magic")? != MAGIC {
            return Err(FrescoError::format("bad FTNS magic"));
        }
        let version = u32::from_le_bytes(take(4, "version")?.try_into().unwrap());
        if version != VERSION {
            return Err(FrescoError::format(format!("unsupported FTNS version {version}")));
        }
        let ndim = u32::from_le_bytes(take(4, "ndim")?.try_into().unwrap()) as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let d = u64::from_le_bytes(take(8, "dims")?.try_into().unwrap());
            dims.push(usize::try_from(d).map_err(|_| FrescoError::format("FTNS dimension overflow"))?);
        }
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| FrescoError::format("FTNS element count overflow"))?;
        let payload = take(
            n.checked_mul(4).ok_or_else(|| FrescoError::format("FTNS payload overflow"))?,
            "payload",
        )?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if !cur.is_empty() {
            return Err(FrescoError::format(format!("{} trailing bytes after FTNS payload", cur.len())));
        }
        Ok(Self { dims, data })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| FrescoError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| FrescoError::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            FrescoError::Format(m) => FrescoError::format(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}
