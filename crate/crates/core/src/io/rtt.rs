//! `RTPT` tensor files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! offset  size       field
//! 0       4          magic "RTPT"
//! 4       2          version (u16) = 1
//! 6       1          dtype (u8), 1 = f32
//! 7       1          ndim (u8)
//! 8       8 * ndim   dims (u64 each)
//! ...     4 * prod   payload, row-major f32
//! ```

use std::fs;
use std::path::Path;

use crate::diagnostics::AttentionDump;
use crate::tokens::TokenMatrix;
use crate::{Error, Result};

pub const MAGIC: [u8; 4] = *b"RTPT";
pub const VERSION: u16 = 1;
pub const DTYPE_F32: u8 = 1;

const KIND: &str = "RTT tensor";
const FIXED_HEADER: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let count = element_count(&dims).ok_or_else(|| Error::invalid("tensor shape overflows"))?;
        if dims.len() > usize::from(u8::MAX) {
            return Err(Error::invalid("tensor has more than 255 dimensions"));
        }
        if count != data.len() {
            return Err(Error::invalid(format!(
                "shape {dims:?} needs {count} values, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    /// Narrows a token matrix to `f32`.
    pub fn from_matrix(tokens: &TokenMatrix) -> Self {
        Self {
            dims: vec![tokens.rows(), tokens.cols()],
            data: tokens.to_f32(),
        }
    }

    pub fn into_matrix(self) -> Result<TokenMatrix> {
        match self.dims[..] {
            [rows, cols] => TokenMatrix::from_f32(&self.data, rows, cols),
            _ => Err(Error::invalid(format!(
                "expected a 2-D token tensor, got shape {:?}",
                self.dims
            ))),
        }
    }

    pub fn into_attention(self) -> Result<AttentionDump> {
        match self.dims[..] {
            [layers, tokens] => AttentionDump::new(
                self.data.iter().map(|&v| f64::from(v)).collect(),
                layers,
                tokens,
            ),
            _ => Err(Error::invalid(format!(
                "expected a 2-D attention tensor (layers x tokens), got shape {:?}",
                self.dims
            ))),
        }
    }
}

fn element_count(dims: &[usize]) -> Option<usize> {
    dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}

pub fn encode(tensor: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(FIXED_HEADER + 8 * tensor.dims.len() + 4 * tensor.data.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(DTYPE_F32);
    out.push(tensor.dims.len() as u8);
    for &d in &tensor.dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in &tensor.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < FIXED_HEADER {
        return Err(Error::format(
            KIND,
            format!("{} bytes is shorter than the header", bytes.len()),
        ));
    }
    if bytes[..4] != MAGIC {
        return Err(Error::format(KIND, format!("bad magic {:?}", &bytes[..4])));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::format(
            KIND,
            format!("unsupported version {version}"),
        ));
    }
    if bytes[6] != DTYPE_F32 {
        return Err(Error::format(
            KIND,
            format!("unsupported dtype {}", bytes[6]),
        ));
    }
    let ndim = usize::from(bytes[7]);
    let dims_end = FIXED_HEADER + 8 * ndim;
    if bytes.len() < dims_end {
        return Err(Error::format(KIND, "truncated dimension list"));
    }
    let dims = bytes[FIXED_HEADER..dims_end]
        .chunks_exact(8)
        .map(|c| {
            let d = u64::from_le_bytes(c.try_into().expect("chunk of 8"));
            usize::try_from(d).map_err(|_| Error::format(KIND, format!("dimension {d} too large")))
        })
        .collect::<Result<Vec<_>>>()?;
    let expected = element_count(&dims)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::format(KIND, "shape overflows"))?;
    let payload = &bytes[dims_end..];
    if payload.len() != expected {
        return Err(Error::format(
            KIND,
            format!(
                "payload is {} bytes, shape {dims:?} needs {expected}",
                payload.len()
            ),
        ));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
        .collect();
    Ok(Tensor { dims, data })
}

pub fn read_file(path: impl AsRef<Path>) -> Result<Tensor> {
    decode(&fs::read(path)?)
}

pub fn write_file(path: impl AsRef<Path>, tensor: &Tensor) -> Result<()> {
    fs::write(path, encode(tensor))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let t = Tensor::new(vec![2, 1], vec![1.0, -2.5]).unwrap();
        let bytes = encode(&t);
        assert_eq!(&bytes[..8], &[b'R', b'T', b'P', b'T', 1, 0, 1, 2]);
        assert_eq!(&bytes[8..16], &2u64.to_le_bytes());
        assert_eq!(&bytes[16..24], &1u64.to_le_bytes());
        assert_eq!(&bytes[24..28], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 32);
        assert_eq!(decode(&bytes).unwrap(), t);
    }

    #[test]
    fn rejects_corruption() {
        let good = encode(&Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        let mut bad_version = good.clone();
        bad_version[4] = 2;
        let mut bad_dtype = good.clone();
        bad_dtype[6] = 2;
        let mut trailing = good.clone();
        trailing.push(0);
        for bytes in [
            bad_magic,
            bad_version,
            bad_dtype,
            trailing,
            good[..good.len() - 1].to_vec(),
            good[..10].to_vec(),
            good[..3].to_vec(),
        ] {
            assert!(matches!(decode(&bytes), Err(Error::Format { .. })));
        }
    }

    #[test]
    fn huge_dims_do_not_allocate() {
        let mut bytes = b"RTPT\x01\x00\x01\x02".to_vec();
        bytes.extend_from_slice(&u64::MAX.to_le_bytes());
        bytes.extend_from_slice(&4u64.to_le_bytes());
        assert!(decode(&bytes).is_err());
    }

    #[test]
    fn matrix_conversions() {
        let t = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let m = t.clone().into_matrix().unwrap();
        assert_eq!(Tensor::from_matrix(&m), t);
        assert!(Tensor::new(vec![4], vec![0.0; 4])
            .unwrap()
            .into_matrix()
            .is_err());
        assert!(Tensor::new(vec![1, 1], vec![f32::NAN])
            .unwrap()
            .into_matrix()
            .is_err());
    }
}
