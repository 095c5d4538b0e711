//! GFT1 binary tensor encoding.
//!
//! Layout: magic `GFT1`, u8 dtype (0 = f32, 1 = f64), u8 ndim, six zero
//! bytes, `ndim` little-endian u32 dimensions, then the row-major
//! little-endian payload. Records can be concatenated; [`decode`] reports
//! how many bytes it consumed.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::real::{DType, Real};
use crate::tensor::{numel, Tensor};

pub const MAGIC: [u8; 4] = *b"GFT1";
const HEADER_LEN: usize = 12;

/// A decoded tensor of whichever element type the record declared.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn dtype(&self) -> DType {
        match self {
            AnyTensor::F32(_) => DType::F32,
            AnyTensor::F64(_) => DType::F64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.shape(),
            AnyTensor::F64(t) => t.shape(),
        }
    }

    /// Converts to the requested element type (a no-op when it already matches).
    pub fn into_real<T: Real>(self) -> Tensor<T> {
        match self {
            AnyTensor::F32(t) => t.cast(),
            AnyTensor::F64(t) => t.cast(),
        }
    }
}

pub fn encode<T: Real>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * t.ndim() + T::DTYPE.size() * t.len());
    encode_into(t, &mut out);
    out
}

pub fn encode_into<T: Real>(t: &Tensor<T>, out: &mut Vec<u8>) {
    out.extend_from_slice(&MAGIC);
    out.push(T::DTYPE.code());
    out.push(t.ndim() as u8);
    out.extend_from_slice(&[0u8; 6]);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &x in t.data() {
        x.write_le(out);
    }
}

/// Decodes one record from the front of `bytes`, returning it with the byte count consumed.
pub fn decode(bytes: &[u8]) -> Result<(AnyTensor, usize)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!("header truncated ({} bytes)", bytes.len())));
    }
    if bytes[..4] != MAGIC {
        return Err(Error::Format(format!("bad magic {:02x?}", &bytes[..4])));
    }
    let dtype = DType::from_code(bytes[4])
        .ok_or_else(|| Error::Format(format!("unknown dtype code {}", bytes[4])))?;
    let ndim = bytes[5] as usize;
    if bytes[6..12].iter().any(|&b| b != 0) {
        return Err(Error::Format("reserved header bytes must be zero".into()));
    }
    let dims_end = HEADER_LEN + 4 * ndim;
    if bytes.len() < dims_end {
        return Err(Error::Format("dimension list truncated".into()));
    }
    let shape: Vec<usize> = bytes[HEADER_LEN..dims_end]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let n = numel(&shape);
    let end = dims_end + n * dtype.size();
    if bytes.len() < end {
        return Err(Error::Format(format!(
            "payload truncated: need {} bytes, have {}",
            end,
            bytes.len()
        )));
    }
    let payload = &bytes[dims_end..end];
    let tensor = match dtype {
        DType::F32 => AnyTensor::F32(Tensor::new(&shape, read_payload(payload))?),
        DType::F64 => AnyTensor::F64(Tensor::new(&shape, read_payload(payload))?),
    };
    Ok((tensor, end))
}

/// Decodes a buffer holding exactly one record.
pub fn decode_exact(bytes: &[u8]) -> Result<AnyTensor> {
    let (t, used) = decode(bytes)?;
    if used != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - used)));
    }
    Ok(t)
}

fn read_payload<T: Real>(payload: &[u8]) -> Vec<T> {
    payload.chunks_exact(T::DTYPE.size()).map(T::read_le).collect()
}
