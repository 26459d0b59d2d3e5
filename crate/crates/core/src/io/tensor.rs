//! The `BKT1` raw tensor container shared by masks, features, weights and
//! fusion traces.
//!
//! Layout (all integers little-endian):
//!
//! | offset | size      | field                                   |
//! |--------|-----------|-----------------------------------------|
//! | 0      | 4         | magic `b"BKT1"`                         |
//! | 4      | 4 (u32)   | dtype code: 1 = f32-le, 2 = f64-le      |
//! | 8      | 4 (u32)   | ndim                                    |
//! | 12     | 8·ndim    | dims, u64 each                          |
//! | ..     | 4 (u32)   | metadata length in bytes (0 = none)     |
//! | ..     | len       | UTF-8 metadata                          |
//! | ..     | n·size    | row-major payload, n = product(dims)    |

use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"BKT1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn code(self) -> u32 {
        match self {
            DType::F32 => 1,
            DType::F64 => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            1 => Some(DType::F32),
            2 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// In-memory tensor. Values are held as `f64`; an `F32` tensor only ever
/// holds values that are exactly representable in `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    dtype: DType,
    dims: Vec<usize>,
    metadata: Option<String>,
    data: Vec<f64>,
}

impl TensorFile {
    /// Single-precision tensor; values are rounded to `f32`.
    pub fn f32(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let data = data.into_iter().map(|v| v as f32 as f64).collect();
        Self::build(DType::F32, dims, data)
    }

    pub fn f64(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        Self::build(DType::F64, dims, data)
    }

    fn build(dtype: DType, dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected = element_count(&dims).ok_or_else(|| Error::input(format!("tensor dims {dims:?} overflow")))?;
        if expected != data.len() {
            return Err(Error::input(format!(
                "tensor dims {dims:?} need {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            dtype,
            dims,
            metadata: None,
            data,
        })
    }

    pub fn with_metadata(mut self, metadata: impl Into<String>) -> Self {
        let m = metadata.into();
        self.metadata = if m.is_empty() { None } else { Some(m) };
        self
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn metadata(&self) -> Option<&str> {
        self.metadata.as_deref()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = self.metadata.as_deref().unwrap_or("").as_bytes();
        let mut out = Vec::with_capacity(16 + 8 * self.dims.len() + meta.len() + self.data.len() * self.dtype.size());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.dtype.code().to_le_bytes());
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for d in &self.dims {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(meta);
        match self.dtype {
            DType::F32 => {
                for v in &self.data {
                    out.extend_from_slice(&(*v as f32).to_le_bytes());
                }
            }
            DType::F64 => {
                for v in &self.data {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(Error::format(0, format!("bad magic {magic:?}, expected \"BKT1\"")));
        }
        let dtype_pos = r.pos;
        let code = r.u32("dtype code")?;
        let dtype =
            DType::from_code(code).ok_or_else(|| Error::format(dtype_pos, format!("unknown dtype code {code}")))?;
        let ndim = r.u32("ndim")? as usize;
        let mut dims = Vec::with_capacity(ndim.min(64));
        for i in 0..ndim {
            let pos = r.pos;
            let d = r.u64(&format!("dim {i}"))?;
            let d = usize::try_from(d).map_err(|_| Error::format(pos, format!("dim {i} = {d} too large")))?;
            dims.push(d);
        }
        let meta_pos = r.pos;
        let meta_len = r.u32("metadata length")? as usize;
        let meta = r.take(meta_len, "metadata")?;
        let metadata = if meta_len == 0 {
            None
        } else {
            Some(String::from_utf8(meta.to_vec()).map_err(|e| {
                Error::format(
                    meta_pos + 4 + e.utf8_error().valid_up_to(),
                    "metadata is not valid UTF-8",
                )
            })?)
        };
        let count = element_count(&dims).ok_or_else(|| Error::format(12, format!("dims {dims:?} overflow")))?;
        let payload_pos = r.pos;
        let need = count
            .checked_mul(dtype.size())
            .ok_or_else(|| Error::format(12, "payload size overflows"))?;
        let remaining = bytes.len() - payload_pos;
        if remaining < need {
            return Err(Error::format(
                bytes.len(),
                format!("payload truncated: expected {need} bytes from offset {payload_pos}, found {remaining}"),
            ));
        }
        if remaining > need {
            return Err(Error::format(
                payload_pos + need,
                format!("{} trailing bytes after payload", remaining - need),
            ));
        }
        let payload = &bytes[payload_pos..];
        let data = match dtype {
            DType::F32 => payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            DType::F64 => payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        };
        Ok(Self {
            dtype,
            dims,
            metadata,
            data,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
    }
}

fn element_count(dims: &[usize]) -> Option<usize> {
    dims.iter().try_fold(1usize, |acc, d| acc.checked_mul(*d))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(Error::format(
                self.pos,
                format!(
                    "truncated header: {what} needs {n} bytes, {} left",
                    self.bytes.len() - self.pos
                ),
            )),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}
