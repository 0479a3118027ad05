//! The `HFAR` binary array format.
//!
//! Layout, all little-endian: magic `HFAR`, version `u32`, dtype `u32`
//! (0 = f64, 1 = complex128 as interleaved re/im f64), ndims `u32`, one `u64`
//! per dimension, then the row-major payload.

use std::io::{Read, Write};

use num_complex::Complex64;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"HFAR";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F64,
    C128,
}

impl DType {
    fn code(self) -> u32 {
        match self {
            DType::F64 => 0,
            DType::C128 => 1,
        }
    }

    fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(DType::F64),
            1 => Ok(DType::C128),
            other => Err(Error::Format(format!("unknown dtype code {other}"))),
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F64 => 8,
            DType::C128 => 16,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DType::F64 => "f64",
            DType::C128 => "c128",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F64(Vec<f64>),
    C128(Vec<Complex64>),
}

impl ArrayData {
    pub fn len(&self) -> usize {
        match self {
            ArrayData::F64(v) => v.len(),
            ArrayData::C128(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            ArrayData::F64(_) => DType::F64,
            ArrayData::C128(_) => DType::C128,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArrayFile {
    pub dims: Vec<usize>,
    pub data: ArrayData,
}

impl ArrayFile {
    pub fn new(dims: Vec<usize>, data: ArrayData) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(Error::DimensionMismatch {
                expected,
                got: data.len(),
            });
        }
        Ok(ArrayFile { dims, data })
    }

    pub fn real(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        Self::new(dims, ArrayData::F64(data))
    }

    pub fn complex(dims: Vec<usize>, data: Vec<Complex64>) -> Result<Self> {
        Self::new(dims, ArrayData::C128(data))
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn write<W: Write>(&self, out: &mut W) -> Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        out.write_all(&self.dtype().code().to_le_bytes())?;
        out.write_all(&(self.dims.len() as u32).to_le_bytes())?;
        for &n in &self.dims {
            out.write_all(&(n as u64).to_le_bytes())?;
        }
        match &self.data {
            ArrayData::F64(v) => {
                for x in v {
                    out.write_all(&x.to_le_bytes())?;
                }
            }
            ArrayData::C128(v) => {
                for z in v {
                    out.write_all(&z.re.to_le_bytes())?;
                    out.write_all(&z.im.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read<R: Read>(input: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(input, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not an HFAR file".into()));
        }
        let version = read_u32(input)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported HFAR version {version}")));
        }
        let dtype = DType::from_code(read_u32(input)?)?;
        let ndims = read_u32(input)? as usize;
        let mut dims = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            let n = read_u64(input)?;
            dims.push(usize::try_from(n).map_err(|_| Error::Format("dimension overflows usize".into()))?);
        }
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &n| acc.checked_mul(n))
            .ok_or_else(|| Error::Format("payload size overflows".into()))?;
        let mut payload = Vec::new();
        input.read_to_end(&mut payload)?;
        if payload.len() != count * dtype.size() {
            return Err(Error::Format(format!(
                "payload has {} bytes, expected {}",
                payload.len(),
                count * dtype.size()
            )));
        }
        let floats: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let data = match dtype {
            DType::F64 => ArrayData::F64(floats),
            DType::C128 => ArrayData::C128(
                floats
                    .chunks_exact(2)
                    .map(|c| Complex64::new(c[0], c[1]))
                    .collect(),
            ),
        };
        Ok(ArrayFile { dims, data })
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        Self::read(&mut bytes)
    }
}

fn read_exact<R: Read>(input: &mut R, buf: &mut [u8]) -> Result<()> {
    input
        .read_exact(buf)
        .map_err(|e| Error::Format(format!("truncated header: {e}")))
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(input, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(input: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(input, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let a = ArrayFile::real(vec![2, 3], vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let b = a.to_bytes();
        assert_eq!(&b[0..4], b"HFAR");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 0);
        assert_eq!(u32::from_le_bytes(b[12..16].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(b[16..24].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(b[24..32].try_into().unwrap()), 3);
        assert_eq!(b.len(), 32 + 6 * 8);
        // row-major: element (1, 0) is the fourth value
        assert_eq!(f64::from_le_bytes(b[32 + 24..32 + 32].try_into().unwrap()), 3.0);
    }

    #[test]
    fn complex_payload_is_interleaved() {
        let a = ArrayFile::complex(vec![1], vec![Complex64::new(1.5, -2.0)]).unwrap();
        let b = a.to_bytes();
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 1);
        assert_eq!(f64::from_le_bytes(b[24..32].try_into().unwrap()), 1.5);
        assert_eq!(f64::from_le_bytes(b[32..40].try_into().unwrap()), -2.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ArrayFile::real(vec![2, 2], vec![0.0; 3]).is_err());
        let good = ArrayFile::real(vec![2], vec![1.0, 2.0]).unwrap().to_bytes();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(ArrayFile::from_bytes(&bad), Err(Error::Format(_))));
        assert!(ArrayFile::from_bytes(&good[..good.len() - 1]).is_err());
        assert!(ArrayFile::from_bytes(&good[..10]).is_err());
        let mut dtype = good.clone();
        dtype[8] = 7;
        assert!(ArrayFile::from_bytes(&dtype).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(dims in proptest::collection::vec(0usize..4, 0..4), seed in any::<u64>(), complex in any::<bool>()) {
            let n: usize = dims.iter().product();
            let vals: Vec<f64> = (0..2 * n).map(|i| (seed.wrapping_mul(i as u64 + 1) as f64).sin()).collect();
            let a = if complex {
                ArrayFile::complex(dims.clone(), vals.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect()).unwrap()
            } else {
                ArrayFile::real(dims.clone(), vals[..n].to_vec()).unwrap()
            };
            let bytes = a.to_bytes();
            prop_assert_eq!(bytes.len(), 16 + 8 * dims.len() + n * a.dtype().size());
            prop_assert_eq!(ArrayFile::from_bytes(&bytes).unwrap(), a);
        }
    }
}
