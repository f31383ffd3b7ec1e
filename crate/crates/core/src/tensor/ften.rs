//! `FTEN` binary tensor format.
//!
//! Layout: magic bytes `FTEN`, u8 version (=1), u8 dtype (1 = f32,
//! 2 = f64), u8 rank, `rank` little-endian u32 dims, then the raw
//! little-endian values in row-major order. Used for checkpoints, flow
//! dumps, and dataset caches.

use std::io::{Read, Write};

use thiserror::Error;

use super::{Scalar, Tensor, TensorError};

const MAGIC: &[u8; 4] = b"FTEN";
const VERSION: u8 = 1;

/// Dtype codes in the FTEN header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32 = 1,
    F64 = 2,
}

#[derive(Debug, Error)]
pub enum FtenError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic bytes (not an FTEN file)")]
    BadMagic,
    #[error("unsupported FTEN version {0}")]
    BadVersion(u8),
    #[error("unknown dtype code {0}")]
    BadDtype(u8),
    #[error("dtype mismatch: file holds {found:?}, caller wants {wanted:?}")]
    DtypeMismatch { found: Dtype, wanted: Dtype },
    #[error("tensor error: {0}")]
    Tensor(#[from] TensorError),
}

/// A tensor of either profile, as read from disk.
#[derive(Debug, Clone)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.shape(),
            AnyTensor::F64(t) => t.shape(),
        }
    }

    /// Convert into the requested profile, erroring on dtype mismatch.
    pub fn into_exact<T: Scalar>(self) -> Result<Tensor<T>, FtenError> {
        let found = match &self {
            AnyTensor::F32(_) => Dtype::F32,
            AnyTensor::F64(_) => Dtype::F64,
        };
        if found != T::DTYPE {
            return Err(FtenError::DtypeMismatch {
                found,
                wanted: T::DTYPE,
            });
        }
        let (shape, raw) = match self {
            AnyTensor::F32(t) => (t.shape().to_vec(), t.iter().map(|v| v.to_f64()).collect::<Vec<_>>()),
            AnyTensor::F64(t) => (t.shape().to_vec(), t.into_data()),
        };
        let data = raw.into_iter().map(T::of).collect();
        Ok(Tensor::new(&shape, data)?)
    }
}

/// Serialize a tensor in FTEN layout.
pub fn write_ften<T: Scalar, W: Write>(w: &mut W, t: &Tensor<T>) -> Result<(), FtenError> {
    let mut buf = Vec::with_capacity(7 + 4 * t.rank() + t.len() * T::BYTES);
    buf.extend_from_slice(MAGIC);
    buf.push(VERSION);
    buf.push(T::DTYPE as u8);
    buf.push(u8::try_from(t.rank()).expect("rank fits in u8"));
    for &d in t.shape() {
        buf.extend_from_slice(&u32::try_from(d).expect("dim fits in u32").to_le_bytes());
    }
    for &v in t.iter() {
        v.write_le(&mut buf);
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Deserialize a tensor from FTEN layout.
pub fn read_ften<R: Read>(r: &mut R) -> Result<AnyTensor, FtenError> {
    let mut head = [0u8; 7];
    r.read_exact(&mut head)?;
    if &head[..4] != MAGIC {
        return Err(FtenError::BadMagic);
    }
    if head[4] != VERSION {
        return Err(FtenError::BadVersion(head[4]));
    }
    let dtype = match head[5] {
        1 => Dtype::F32,
        2 => Dtype::F64,
        other => return Err(FtenError::BadDtype(other)),
    };
    let rank = head[6] as usize;
    let mut dims = vec![0u8; 4 * rank];
    r.read_exact(&mut dims)?;
    let shape: Vec<usize> = dims
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let count: usize = shape.iter().product();
    match dtype {
        Dtype::F32 => {
            let mut raw = vec![0u8; count * 4];
            r.read_exact(&mut raw)?;
            let data: Vec<f32> = raw.chunks_exact(4).map(f32::read_le).collect();
            Ok(AnyTensor::F32(Tensor::new(&shape, data)?))
        }
        Dtype::F64 => {
            let mut raw = vec![0u8; count * 8];
            r.read_exact(&mut raw)?;
            let data: Vec<f64> = raw.chunks_exact(8).map(f64::read_le).collect();
            Ok(AnyTensor::F64(Tensor::new(&shape, data)?))
        }
    }
}

/// Write an FTEN file at `path`.
pub fn write_ften_file<T: Scalar>(path: &std::path::Path, t: &Tensor<T>) -> Result<(), FtenError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_ften(&mut f, t)?;
    f.flush()?;
    Ok(())
}

/// Read an FTEN file at `path`.
pub fn read_ften_file(path: &std::path::Path) -> Result<AnyTensor, FtenError> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_ften(&mut f)
}
