//! Binary tensor blobs.
//!
//! Layout: magic `CANT`, version `u8`, element type `u8` (0 = f64, 1 = f32),
//! ndim `u8`, `ndim` little-endian `u32` dims, then little-endian elements in
//! row-major order. No padding anywhere.

use std::fs;
use std::path::Path;

use super::Tensor;
use crate::error::{CanError, Result};

pub const BLOB_MAGIC: &[u8; 4] = b"CANT";
pub const BLOB_VERSION: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlobDtype {
    F64 = 0,
    F32 = 1,
}

impl BlobDtype {
    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(BlobDtype::F64),
            1 => Ok(BlobDtype::F32),
            other => Err(CanError::Blob(format!("unknown element type code {other}"))),
        }
    }

    fn width(self) -> usize {
        match self {
            BlobDtype::F64 => 8,
            BlobDtype::F32 => 4,
        }
    }
}

impl Tensor {
    pub fn to_blob_bytes(&self, dtype: BlobDtype) -> Result<Vec<u8>> {
        if self.ndim() > u8::MAX as usize {
            return Err(CanError::Blob(format!("{} dims do not fit in a u8", self.ndim())));
        }
        let mut out = Vec::with_capacity(7 + 4 * self.ndim() + dtype.width() * self.len());
        out.extend_from_slice(BLOB_MAGIC);
        out.push(BLOB_VERSION);
        out.push(dtype as u8);
        out.push(self.ndim() as u8);
        for &d in self.shape() {
            let d = u32::try_from(d)
                .map_err(|_| CanError::Blob(format!("dimension {d} does not fit in a u32")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        match dtype {
            BlobDtype::F64 => {
                for v in self.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            BlobDtype::F32 => {
                for &v in self.data() {
                    out.extend_from_slice(&(v as f32).to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn from_blob_bytes(bytes: &[u8]) -> Result<(Tensor, BlobDtype)> {
        let header = bytes
            .get(..7)
            .ok_or_else(|| CanError::Blob("truncated header".into()))?;
        if &header[..4] != BLOB_MAGIC {
            return Err(CanError::Blob("bad magic".into()));
        }
        if header[4] != BLOB_VERSION {
            return Err(CanError::Blob(format!("unsupported version {}", header[4])));
        }
        let dtype = BlobDtype::from_code(header[5])?;
        let ndim = header[6] as usize;
        let dims_end = 7 + 4 * ndim;
        let dims = bytes
            .get(7..dims_end)
            .ok_or_else(|| CanError::Blob("truncated dims".into()))?;
        let shape: Vec<usize> = dims
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect();
        let n: usize = shape.iter().product();
        let payload = &bytes[dims_end..];
        if payload.len() != n * dtype.width() {
            return Err(CanError::Blob(format!(
                "payload is {} bytes, shape {:?} needs {}",
                payload.len(),
                shape,
                n * dtype.width()
            )));
        }
        let data = match dtype {
            BlobDtype::F64 => payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
            BlobDtype::F32 => payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
        };
        Ok((Tensor::new(shape, data)?, dtype))
    }
}

pub fn write_blob(path: impl AsRef<Path>, tensor: &Tensor, dtype: BlobDtype) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, tensor.to_blob_bytes(dtype)?).map_err(|e| CanError::io(path, e))
}

pub fn read_blob(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| CanError::io(path, e))?;
    Tensor::from_blob_bytes(&bytes)
        .map(|(t, _)| t)
        .map_err(|e| CanError::Blob(format!("{}: {e}", path.display())))
}
