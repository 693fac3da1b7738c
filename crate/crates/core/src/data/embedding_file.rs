//! Binary embedding matrix format.
//!
//! Little-endian layout: magic `OPEB`, version `u32 = 1`, rows `u64`,
//! dimension `u32`, dtype `u8`, then `rows * dim` row-major scalars.
//! dtype 0 is IEEE-754 binary32; dtype 1 (binary64) is used for lossless
//! parameter checkpoints.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const MAGIC: &[u8; 4] = b"OPEB";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 4 + 4 + 8 + 4 + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32 = 0,
    F64 = 1,
}

impl Dtype {
    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

pub fn encode(matrix: &Matrix, dtype: Dtype) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + matrix.as_slice().len() * dtype.width());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(matrix.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(matrix.cols() as u32).to_le_bytes());
    out.push(dtype as u8);
    for &v in matrix.as_slice() {
        match dtype {
            Dtype::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            Dtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Matrix> {
    let err = |offset: usize, msg: String| Error::ingestion(path, format!("byte offset {offset}"), msg);
    if bytes.len() < HEADER_LEN {
        return Err(err(
            0,
            format!("file too short for header ({} bytes)", bytes.len()),
        ));
    }
    if &bytes[0..4] != MAGIC {
        return Err(err(0, format!("bad magic {:?}", &bytes[0..4])));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(err(4, format!("unsupported version {version}")));
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
    let dtype = match bytes[20] {
        0 => Dtype::F32,
        1 => Dtype::F64,
        other => return Err(err(20, format!("unsupported dtype {other}"))),
    };
    let body = &bytes[HEADER_LEN..];
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(dtype.width()))
        .ok_or_else(|| err(8, "row count overflows".into()))?;
    if body.len() != expected {
        return Err(err(
            HEADER_LEN,
            format!(
                "header declares {rows}x{cols} values ({expected} bytes) but body has {} bytes",
                body.len()
            ),
        ));
    }
    let mut data = Vec::with_capacity(rows * cols);
    for (k, chunk) in body.chunks_exact(dtype.width()).enumerate() {
        let v = match dtype {
            Dtype::F32 => f32::from_le_bytes(chunk.try_into().unwrap()) as f64,
            Dtype::F64 => f64::from_le_bytes(chunk.try_into().unwrap()),
        };
        if !v.is_finite() {
            return Err(err(
                HEADER_LEN + k * dtype.width(),
                format!(
                    "non-finite value at row {} column {}",
                    k / cols.max(1),
                    k % cols.max(1)
                ),
            ));
        }
        data.push(v);
    }
    Matrix::from_vec(rows, cols, data)
}

pub fn read(path: &Path) -> Result<Matrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

pub fn write(path: &Path, matrix: &Matrix, dtype: Dtype) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&encode(matrix, dtype))
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let m = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let bytes = encode(&m, Dtype::F32);
        assert_eq!(&bytes[..4], b"OPEB");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 3);
        assert_eq!(bytes[20], 0);
        assert_eq!(bytes.len(), HEADER_LEN + 6 * 4);
        assert_eq!(decode(&bytes, Path::new("m")).unwrap(), m);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let m = Matrix::from_vec(1, 2, vec![1.0, 2.0]).unwrap();
        let mut bytes = encode(&m, Dtype::F32);
        bytes[0] = b'X';
        assert!(matches!(
            decode(&bytes, Path::new("m")),
            Err(Error::Ingestion { .. })
        ));
        let bytes = encode(&m, Dtype::F32);
        let err = decode(&bytes[..bytes.len() - 1], Path::new("m")).unwrap_err();
        assert!(err.to_string().contains("body has"));
    }

    #[test]
    fn f64_is_lossless() {
        let m = Matrix::from_vec(1, 2, vec![0.1, 1.0 / 3.0]).unwrap();
        let back = decode(&encode(&m, Dtype::F64), Path::new("m")).unwrap();
        assert_eq!(back, m);
    }
}
