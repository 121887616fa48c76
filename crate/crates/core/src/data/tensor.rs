//! `DFT1` binary tensor files.
//!
//! Layout (little-endian):
//! - magic: `b"DFT1"`
//! - rank: u32
//! - dims: rank * u32
//! - data: f32 * product(dims), row-major

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DFT1";

/// Dense row-major float tensor as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let numel = numel(&dims).ok_or_else(|| Error::Shape("tensor dims overflow".into()))?;
        if numel != data.len() {
            return Err(Error::Shape(format!(
                "tensor dims {dims:?} need {numel} values, got {}",
                data.len()
            )));
        }
        if dims.iter().any(|&d| d > u32::MAX as usize) || dims.len() > u32::MAX as usize {
            return Err(Error::Shape("tensor dims exceed u32".into()));
        }
        Ok(Self { dims, data })
    }

    /// Narrows double-precision values to the f32 payload.
    pub fn from_f64(dims: Vec<usize>, data: &[f64]) -> Result<Self> {
        Self::new(dims, data.iter().map(|&v| v as f32).collect())
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Parses a complete `DFT1` buffer. `origin` only labels errors.
    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |msg: String| Error::format(origin, msg);
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(bad("not a DFT1 tensor (bad magic)".into()));
        }
        let rank = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let header = rank
            .checked_mul(4)
            .and_then(|n| n.checked_add(8))
            .ok_or_else(|| bad("rank overflow".into()))?;
        if bytes.len() < header {
            return Err(bad(format!("truncated header for rank {rank}")));
        }
        let dims: Vec<usize> = bytes[8..header]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect();
        let numel = numel(&dims).ok_or_else(|| bad(format!("dims {dims:?} overflow")))?;
        let payload = &bytes[header..];
        let expected = numel
            .checked_mul(4)
            .ok_or_else(|| bad(format!("dims {dims:?} overflow")))?;
        if payload.len() != expected {
            return Err(bad(format!(
                "payload is {} bytes, dims {dims:?} require {expected}",
                payload.len()
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self { dims, data })
    }
}

fn numel(dims: &[usize]) -> Option<usize> {
    dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Tensor::from_bytes(&bytes, path)
}

pub fn write_tensor(tensor: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, tensor.to_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_rank1_is_twelve_bytes() {
        let t = Tensor::new(vec![0], vec![]).unwrap();
        let bytes = t.to_bytes();
        assert_eq!(bytes.len(), 12);
        assert_eq!(&bytes[..4], b"DFT1");
        assert_eq!(Tensor::from_bytes(&bytes, Path::new("mem")).unwrap(), t);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let t = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut bytes = t.to_bytes();
        let p = Path::new("mem");
        assert!(Tensor::from_bytes(&bytes[..bytes.len() - 1], p).is_err());
        assert!(Tensor::from_bytes(&bytes[..10], p).is_err());
        bytes[0] = b'X';
        assert!(matches!(Tensor::from_bytes(&bytes, p), Err(Error::Format { .. })));
        // trailing garbage is not a valid payload either
        let mut long = t.to_bytes();
        long.push(0);
        assert!(Tensor::from_bytes(&long, p).is_err());
    }

    #[test]
    fn header_is_little_endian() {
        let t = Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let b = t.to_bytes();
        assert_eq!(&b[4..8], &[1, 0, 0, 0]);
        assert_eq!(&b[8..12], &[3, 0, 0, 0]);
        assert_eq!(&b[12..16], &1.0f32.to_le_bytes());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.dft1");
        let t = Tensor::new(vec![4, 8], (0..32).map(|i| i as f32 * 0.25).collect()).unwrap();
        write_tensor(&t, &path).unwrap();
        assert_eq!(read_tensor(&path).unwrap(), t);
        assert!(matches!(
            read_tensor(dir.path().join("missing.dft1")),
            Err(Error::Io { .. })
        ));
    }

    proptest! {
        #[test]
        fn round_trip_bit_exact(dims in proptest::collection::vec(0usize..6, 0..4), seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let n: usize = dims.iter().product();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f32> = (0..n).map(|_| f32::from_bits(rng.gen::<u32>() & 0x7f7f_ffff)).collect();
            let t = Tensor::new(dims, data).unwrap();
            let back = Tensor::from_bytes(&t.to_bytes(), Path::new("mem")).unwrap();
            prop_assert_eq!(back.dims(), t.dims());
            let a: Vec<u32> = back.data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = t.data().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }
}
