//! `.tsr` raw tensor files.
//!
//! Layout: magic `MBT1`, rank (u32 LE), `rank` extents (u32 LE each),
//! dtype tag (u32 LE: 1 = f32, 2 = f64), then the row-major payload in
//! little-endian. An f64 tensor written as f64 round-trips bit-identically;
//! writing as f32 quantizes once, after which round-trips are stable.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"MBT1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn tag(self) -> u32 {
        match self {
            Dtype::F32 => 1,
            Dtype::F64 => 2,
        }
    }

    fn from_tag(tag: u32) -> Result<Dtype> {
        match tag {
            1 => Ok(Dtype::F32),
            2 => Ok(Dtype::F64),
            other => Err(Error::Format(format!("unknown dtype tag {other}"))),
        }
    }

    fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

pub(crate) fn encode_tensor(tensor: &Tensor, dtype: Dtype) -> Vec<u8> {
    let shape = tensor.shape();
    let mut out = Vec::with_capacity(4 + 4 + 4 * shape.len() + 4 + tensor.numel() * dtype.size());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &e in shape {
        out.extend_from_slice(&(e as u32).to_le_bytes());
    }
    out.extend_from_slice(&dtype.tag().to_le_bytes());
    match dtype {
        Dtype::F32 => {
            for &v in tensor.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Dtype::F64 => {
            for &v in tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

/// Decode one tensor from `bytes`, returning it plus the bytes consumed.
pub(crate) fn decode_tensor(bytes: &[u8]) -> Result<(Tensor, usize)> {
    let take = |off: usize, n: usize| -> Result<&[u8]> {
        bytes
            .get(off..off + n)
            .ok_or_else(|| Error::Format("tensor block truncated".into()))
    };
    if take(0, 4)? != MAGIC {
        return Err(Error::Format("bad tensor magic (expected MBT1)".into()));
    }
    let rank = u32::from_le_bytes(take(4, 4)?.try_into().unwrap()) as usize;
    if rank == 0 || rank > crate::tensor::MAX_RANK {
        return Err(Error::Format(format!("unsupported tensor rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    let mut off = 8;
    for _ in 0..rank {
        shape.push(u32::from_le_bytes(take(off, 4)?.try_into().unwrap()) as usize);
        off += 4;
    }
    let dtype = Dtype::from_tag(u32::from_le_bytes(take(off, 4)?.try_into().unwrap()))?;
    off += 4;
    let numel: usize = shape.iter().product();
    let payload = take(off, numel * dtype.size())?;
    let data: Vec<f64> = match dtype {
        Dtype::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        Dtype::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    let tensor = Tensor::new(&shape, data).map_err(|e| Error::Format(e.to_string()))?;
    Ok((tensor, off + numel * dtype.size()))
}

pub fn write_tensor(path: &Path, tensor: &Tensor, dtype: Dtype) -> Result<()> {
    fs::write(path, encode_tensor(tensor, dtype)).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (tensor, consumed) = decode_tensor(&bytes)?;
    if consumed != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after tensor payload",
            bytes.len() - consumed
        )));
    }
    Ok(tensor)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f64_round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.tsr");
        let t = Tensor::new(&[2, 3], vec![0.1, -0.2, 1.5e-8, 3.0, 0.0, -7.25]).unwrap();
        write_tensor(&path, &t, Dtype::F64).unwrap();
        let back = read_tensor(&path).unwrap();
        assert_eq!(back.shape(), t.shape());
        for (a, b) in back.data().iter().zip(t.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn f32_write_then_rewrite_is_stable() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.tsr");
        let p2 = dir.path().join("b.tsr");
        let t = Tensor::new(&[3], vec![0.1, 0.2, 0.3]).unwrap();
        write_tensor(&p1, &t, Dtype::F32).unwrap();
        let once = read_tensor(&p1).unwrap();
        write_tensor(&p2, &once, Dtype::F32).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn rejects_foreign_and_truncated_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.tsr");
        std::fs::write(&path, b"PNG!not a tensor").unwrap();
        assert!(matches!(read_tensor(&path), Err(Error::Format(_))));

        let t = Tensor::new(&[4], vec![1.0; 4]).unwrap();
        let mut bytes = encode_tensor(&t, Dtype::F64);
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_tensor(&path), Err(Error::Format(_))));
    }
}
