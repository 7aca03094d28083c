//! TEN1 binary tensor container.
//!
//! Layout, all little-endian:
//!
//! ```text
//! offset 0   magic  "TEN1"
//! offset 4   dtype  u8   (0 = f32, 1 = f64)
//! offset 5   rank   u8   (<= 8)
//! offset 6   extents rank x u64
//! then       payload: product(extents) scalars, row-major
//! ```
//!
//! Reads are strict: bad magic, unknown dtype, excessive rank, zero
//! extents, or a payload whose length disagrees with the header all fail
//! with a parse error carrying the byte offset of the problem.

use crate::error::{Error, Result};
use crate::tensor::{DType, Scalar, Tensor};
use std::io::Write;
use std::path::Path;

pub const MAGIC: [u8; 4] = *b"TEN1";
pub const MAX_RANK: usize = 8;

/// A tensor of either supported precision, as found in a file.
#[derive(Debug, Clone, PartialEq)]
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

    /// Converts to the requested scalar type (lossless when it matches the
    /// stored dtype).
    pub fn into_tensor<S: Scalar>(self) -> Tensor<S> {
        match self {
            AnyTensor::F32(t) => t.cast::<S>(),
            AnyTensor::F64(t) => t.cast::<S>(),
        }
    }
}

pub fn encode<S: Scalar>(t: &Tensor<S>) -> Result<Vec<u8>> {
    let rank = t.rank();
    if rank > MAX_RANK {
        return Err(Error::Config(format!("rank {rank} exceeds container maximum {MAX_RANK}")));
    }
    let mut out = Vec::with_capacity(6 + 8 * rank + t.numel() * S::DTYPE.size());
    out.extend_from_slice(&MAGIC);
    out.push(S::DTYPE.code());
    out.push(rank as u8);
    for &e in t.shape() {
        out.extend_from_slice(&(e as u64).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(&mut out);
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<AnyTensor> {
    let need = |offset: usize, n: usize, what: &str| -> Result<()> {
        if bytes.len() < offset + n {
            Err(Error::parse(
                bytes.len() as u64,
                format!("truncated input: expected {what} at byte {offset}"),
            ))
        } else {
            Ok(())
        }
    };

    need(0, 4, "magic")?;
    if bytes[0..4] != MAGIC {
        return Err(Error::parse(0, format!("bad magic {:?}, expected \"TEN1\"", &bytes[0..4])));
    }
    need(4, 1, "dtype byte")?;
    let dtype = DType::from_code(bytes[4])
        .ok_or_else(|| Error::parse(4, format!("unknown dtype code {}", bytes[4])))?;
    need(5, 1, "rank byte")?;
    let rank = bytes[5] as usize;
    if rank > MAX_RANK {
        return Err(Error::parse(5, format!("rank {rank} exceeds maximum {MAX_RANK}")));
    }

    let mut shape = Vec::with_capacity(rank);
    let mut offset = 6usize;
    for axis in 0..rank {
        need(offset, 8, "extent")?;
        let e = u64::from_le_bytes(bytes[offset..offset + 8].try_into().unwrap());
        if e == 0 {
            return Err(Error::parse(offset as u64, format!("zero extent for axis {axis}")));
        }
        let e = usize::try_from(e)
            .map_err(|_| Error::parse(offset as u64, format!("extent {e} does not fit usize")))?;
        shape.push(e);
        offset += 8;
    }

    let numel = shape.iter().try_fold(1usize, |acc, &e| acc.checked_mul(e)).ok_or_else(
        || Error::parse(offset as u64, format!("shape {shape:?} overflows element count")),
    )?;
    let expected = numel
        .checked_mul(dtype.size())
        .ok_or_else(|| Error::parse(offset as u64, "payload size overflows".to_string()))?;
    let payload = &bytes[offset..];
    if payload.len() != expected {
        return Err(Error::parse(
            offset as u64,
            format!(
                "payload holds {} bytes but shape {shape:?} as {} needs {expected}",
                payload.len(),
                dtype.name()
            ),
        ));
    }

    fn read_all<S: Scalar>(shape: Vec<usize>, payload: &[u8]) -> Tensor<S> {
        let data = payload.chunks_exact(S::DTYPE.size()).map(S::from_le).collect();
        Tensor::new(shape, data).expect("header-validated shape")
    }

    Ok(match dtype {
        DType::F32 => AnyTensor::F32(read_all::<f32>(shape, payload)),
        DType::F64 => AnyTensor::F64(read_all::<f64>(shape, payload)),
    })
}

pub fn write_file<S: Scalar>(path: &Path, t: &Tensor<S>) -> Result<()> {
    let bytes = encode(t)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<AnyTensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    #[test]
    fn header_bytes_are_as_documented() {
        let t = Tensor::new(vec![2, 3], vec![0.0f32; 6]).unwrap();
        let bytes = encode(&t).unwrap();
        assert_eq!(&bytes[0..4], b"TEN1");
        assert_eq!(bytes[4], 0); // f32
        assert_eq!(bytes[5], 2); // rank
        assert_eq!(u64::from_le_bytes(bytes[6..14].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(bytes[14..22].try_into().unwrap()), 3);
        assert_eq!(bytes.len(), 22 + 6 * 4);
    }

    #[test]
    fn round_trip_f32_is_bit_exact() {
        let mut rng = Rng::new(5);
        let t: Tensor<f32> = rng.normal(&[3, 4, 5], 2.5);
        let back = decode(&encode(&t).unwrap()).unwrap();
        match back {
            AnyTensor::F32(u) => {
                assert_eq!(u.shape(), t.shape());
                for (a, b) in t.data().iter().zip(u.data()) {
                    assert_eq!(a.to_bits(), b.to_bits());
                }
            }
            _ => panic!("dtype changed in round trip"),
        }
    }

    #[test]
    fn round_trip_f64() {
        let mut rng = Rng::new(6);
        let t: Tensor<f64> = rng.uniform(&[7], -1.0, 1.0);
        match decode(&encode(&t).unwrap()).unwrap() {
            AnyTensor::F64(u) => assert_eq!(u, t),
            _ => panic!("dtype changed in round trip"),
        }
    }

    #[test]
    fn bad_magic_reports_offset_zero() {
        let t = Tensor::new(vec![1], vec![1.0f32]).unwrap();
        let mut bytes = encode(&t).unwrap();
        bytes[0] = b'X';
        match decode(&bytes) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_dtype_reports_offset_four() {
        let t = Tensor::new(vec![1], vec![1.0f32]).unwrap();
        let mut bytes = encode(&t).unwrap();
        bytes[4] = 9;
        match decode(&bytes) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn excessive_rank_rejected() {
        let t = Tensor::new(vec![1], vec![1.0f32]).unwrap();
        let mut bytes = encode(&t).unwrap();
        bytes[5] = 9;
        match decode(&bytes) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 5),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_and_oversized_payloads_rejected() {
        let t = Tensor::new(vec![2, 2], vec![1.0f32; 4]).unwrap();
        let bytes = encode(&t).unwrap();
        assert!(matches!(decode(&bytes[..bytes.len() - 1]), Err(Error::Parse { .. })));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(decode(&extra), Err(Error::Parse { .. })));
    }

    #[test]
    fn zero_extent_rejected() {
        // hand-build a header with extent 0
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"TEN1");
        bytes.push(0);
        bytes.push(1);
        bytes.extend_from_slice(&0u64.to_le_bytes());
        match decode(&bytes) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 6),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.ten1");
        let mut rng = Rng::new(1);
        let t: Tensor<f32> = rng.normal(&[4, 4], 1.0);
        write_file(&path, &t).unwrap();
        let back = read_file(&path).unwrap().into_tensor::<f32>();
        assert_eq!(back, t);
    }

    proptest! {
        #[test]
        fn round_trip_any_shape(extents in proptest::collection::vec(1usize..5, 0..4), seed in 0u64..100) {
            let mut rng = Rng::new(seed);
            let t: Tensor<f64> = rng.normal(&extents, 1.0);
            let back = decode(&encode(&t).unwrap()).unwrap().into_tensor::<f64>();
            prop_assert_eq!(back, t);
        }
    }
}
