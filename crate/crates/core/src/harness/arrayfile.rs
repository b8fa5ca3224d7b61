//! Binary array container.
//!
//! Layout (all integers little-endian):
//!
//! | bytes        | content                            |
//! |--------------|------------------------------------|
//! | 4            | magic `VOLF`                       |
//! | 2 (u16)      | format version, currently 1        |
//! | 1 (u8)       | dtype tag, 1 = f64                 |
//! | 1 (u8)       | byte order, 0 = little-endian      |
//! | 4 (u32)      | number of dimensions `d`           |
//! | 8·d (u64)    | shape                              |
//! | 8·Πshape     | row-major payload                  |

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Result, VolError};

pub const MAGIC: &[u8; 4] = b"VOLF";
pub const FORMAT_VERSION: u16 = 1;
pub const DTYPE_F64: u8 = 1;
pub const LITTLE_ENDIAN: u8 = 0;

#[derive(Clone, Debug, PartialEq)]
pub struct ArrayData {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl ArrayData {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(VolError::ShapeMismatch(format!(
                "shape {shape:?} holds {n} values, got {}",
                data.len()
            )));
        }
        Ok(ArrayData { shape, data })
    }
}

pub fn encode(a: &ArrayData) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 8 * a.shape.len() + 8 * a.data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(DTYPE_F64);
    out.push(LITTLE_ENDIAN);
    out.extend_from_slice(&(a.shape.len() as u32).to_le_bytes());
    for &s in &a.shape {
        out.extend_from_slice(&(s as u64).to_le_bytes());
    }
    for v in &a.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn take<'a>(bytes: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(VolError::Format("truncated array file".into()));
    }
    let (head, tail) = bytes.split_at(n);
    *bytes = tail;
    Ok(head)
}

pub fn decode(mut bytes: &[u8]) -> Result<ArrayData> {
    let b = &mut bytes;
    if take(b, 4)? != MAGIC {
        return Err(VolError::Format("bad magic".into()));
    }
    let version = u16::from_le_bytes(take(b, 2)?.try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(VolError::Format(format!("unsupported format version {version}")));
    }
    let dtype = take(b, 1)?[0];
    if dtype != DTYPE_F64 {
        return Err(VolError::Format(format!("unsupported dtype tag {dtype}")));
    }
    let order = take(b, 1)?[0];
    if order != LITTLE_ENDIAN {
        return Err(VolError::Format(format!("unsupported byte order {order}")));
    }
    let ndim = u32::from_le_bytes(take(b, 4)?.try_into().unwrap()) as usize;
    let mut shape = Vec::with_capacity(ndim.min(64));
    for _ in 0..ndim {
        let s = u64::from_le_bytes(take(b, 8)?.try_into().unwrap());
        shape.push(usize::try_from(s).map_err(|_| VolError::Format("dimension too large".into()))?);
    }
    let n = shape
        .iter()
        .try_fold(1usize, |acc, &s| acc.checked_mul(s))
        .ok_or_else(|| VolError::Format("shape overflows".into()))?;
    let payload_len = n
        .checked_mul(8)
        .ok_or_else(|| VolError::Format("shape overflows".into()))?;
    if b.len() != payload_len {
        return Err(VolError::Format(format!(
            "payload has {} bytes, shape {shape:?} needs {payload_len}",
            b.len()
        )));
    }
    let data = b
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(ArrayData { shape, data })
}

pub fn write_array(path: &Path, a: &ArrayData) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode(a))?;
    Ok(())
}

pub fn read_array(path: &Path) -> Result<ArrayData> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let a = ArrayData::new(vec![2, 1], vec![1.5, -0.0]).unwrap();
        let bytes = encode(&a);
        assert_eq!(&bytes[..4], b"VOLF");
        assert_eq!(&bytes[4..8], &[1, 0, 1, 0]);
        assert_eq!(&bytes[8..12], &[2, 0, 0, 0]);
        assert_eq!(bytes.len(), 12 + 16 + 16);
        let back = decode(&bytes).unwrap();
        assert_eq!(back.shape, vec![2, 1]);
        assert_eq!(back.data[1].to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn corrupt_inputs() {
        let a = ArrayData::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let bytes = encode(&a);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let mut bad = bytes.clone();
        bad[6] = 2;
        assert!(decode(&bad).is_err());
        assert!(ArrayData::new(vec![2, 2], vec![0.0; 3]).is_err());
    }
}
