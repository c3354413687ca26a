//! Binary tensor encoding.
//!
//! Layout, all little-endian:
//!
//! ```text
//! dtype tag  u8    0 = f32, 1 = f64
//! rank       u32
//! extents    u64 x rank
//! payload    element width x product(extents), row-major
//! ```

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::tensor::{Dtype, Scalar, Tensor};

#[derive(Debug, Error)]
pub enum SerializeError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("unknown dtype tag {0}")]
    DtypeTag(u8),
    #[error("stored dtype is {found}, expected {wanted}")]
    DtypeMismatch { found: Dtype, wanted: Dtype },
    #[error("malformed tensor record: {0}")]
    Malformed(String),
}

pub fn write_tensor<F: Scalar, W: Write>(w: &mut W, t: &Tensor<F>) -> io::Result<()> {
    w.write_all(&[F::DTYPE.tag()])?;
    w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
    for &e in t.shape() {
        w.write_all(&(e as u64).to_le_bytes())?;
    }
    for &v in t.data() {
        v.write_le(w)?;
    }
    Ok(())
}

pub fn read_tensor<F: Scalar, R: Read>(r: &mut R) -> Result<Tensor<F>, SerializeError> {
    let mut tag = [0u8; 1];
    r.read_exact(&mut tag)?;
    let found = Dtype::from_tag(tag[0]).ok_or(SerializeError::DtypeTag(tag[0]))?;
    if found != F::DTYPE {
        return Err(SerializeError::DtypeMismatch { found, wanted: F::DTYPE });
    }
    let mut rank = [0u8; 4];
    r.read_exact(&mut rank)?;
    let rank = u32::from_le_bytes(rank) as usize;
    if rank == 0 || rank > 8 {
        return Err(SerializeError::Malformed(format!("rank {rank} out of range 1..=8")));
    }
    let mut shape = Vec::with_capacity(rank);
    let mut numel: usize = 1;
    for _ in 0..rank {
        let mut e = [0u8; 8];
        r.read_exact(&mut e)?;
        let e = u64::from_le_bytes(e);
        if e == 0 {
            return Err(SerializeError::Malformed("zero extent".into()));
        }
        let e: usize = e
            .try_into()
            .map_err(|_| SerializeError::Malformed(format!("extent {e} overflows usize")))?;
        numel = numel
            .checked_mul(e)
            .ok_or_else(|| SerializeError::Malformed("element count overflow".into()))?;
        shape.push(e);
    }
    if numel.checked_mul(F::width()).is_none() {
        return Err(SerializeError::Malformed("payload size overflow".into()));
    }
    let mut data = Vec::with_capacity(numel);
    for _ in 0..numel {
        data.push(F::read_le(r)?);
    }
    Tensor::new(shape, data).map_err(|e| SerializeError::Malformed(e.to_string()))
}

pub fn tensor_to_bytes<F: Scalar>(t: &Tensor<F>) -> Vec<u8> {
    let mut out = Vec::new();
    write_tensor(&mut out, t).expect("vec write is infallible");
    out
}

pub fn tensor_from_bytes<F: Scalar>(bytes: &[u8]) -> Result<Tensor<F>, SerializeError> {
    let mut cursor = bytes;
    let t = read_tensor(&mut cursor)?;
    if !cursor.is_empty() {
        return Err(SerializeError::Malformed(format!(
            "{} trailing bytes after payload",
            cursor.len()
        )));
    }
    Ok(t)
}
