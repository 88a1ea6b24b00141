//! Binary containers for tensors (`DTC1`) and observation masks (`DTM1`).
//!
//! Layout: 4 magic bytes, `K` as little-endian `u32`, `K` extents as `u32`,
//! then the payload in canonical row-major order: `N` little-endian `f64`
//! for tensors, `N` bytes of `0`/`1` for masks.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{DenseTensor, ObservationMask, TensorShape};

pub const TENSOR_MAGIC: &[u8; 4] = b"DTC1";
pub const MASK_MAGIC: &[u8; 4] = b"DTM1";

fn write_header<W: Write>(w: &mut W, magic: &[u8; 4], shape: &TensorShape) -> Result<()> {
    w.write_all(magic)?;
    w.write_all(&(shape.order() as u32).to_le_bytes())?;
    for &d in shape.dims() {
        let d = u32::try_from(d).map_err(|_| Error::Format(format!("extent {d} exceeds u32")))?;
        w.write_all(&d.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Format(format!("truncated header: {e}")))?;
    Ok(u32::from_le_bytes(buf))
}

fn read_header<R: Read>(r: &mut R, magic: &[u8; 4]) -> Result<TensorShape> {
    let mut got = [0u8; 4];
    r.read_exact(&mut got)
        .map_err(|e| Error::Format(format!("missing magic: {e}")))?;
    if &got != magic {
        return Err(Error::Format(format!(
            "expected magic {:?}, found {:?}",
            String::from_utf8_lossy(magic),
            String::from_utf8_lossy(&got)
        )));
    }
    let order = read_u32(r)? as usize;
    if order > 64 {
        return Err(Error::Format(format!("implausible mode count {order}")));
    }
    let dims = (0..order)
        .map(|_| read_u32(r).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    TensorShape::new(dims).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_tensor<W: Write>(w: &mut W, tensor: &DenseTensor) -> Result<()> {
    write_header(w, TENSOR_MAGIC, tensor.shape())?;
    let mut buf = Vec::with_capacity(tensor.len() * 8);
    for v in tensor.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_tensor<R: Read>(r: &mut R) -> Result<DenseTensor> {
    let shape = read_header(r, TENSOR_MAGIC)?;
    let mut buf = vec![0u8; shape.len() * 8];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Format(format!("truncated tensor payload: {e}")))?;
    let values = buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after tensor payload".into()));
    }
    DenseTensor::new(shape, values)
}

pub fn write_mask<W: Write>(w: &mut W, mask: &ObservationMask) -> Result<()> {
    write_header(w, MASK_MAGIC, mask.shape())?;
    let buf: Vec<u8> = mask.flags().iter().map(|&f| f as u8).collect();
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_mask<R: Read>(r: &mut R) -> Result<ObservationMask> {
    let shape = read_header(r, MASK_MAGIC)?;
    let mut buf = vec![0u8; shape.len()];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Format(format!("truncated mask payload: {e}")))?;
    let flags = buf
        .iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(Error::Format(format!("mask byte {other} is not 0/1"))),
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after mask payload".into()));
    }
    ObservationMask::new(shape, flags)
}

pub fn save_tensor(path: impl AsRef<Path>, tensor: &DenseTensor) -> Result<()> {
    let mut buf = Vec::new();
    write_tensor(&mut buf, tensor)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<DenseTensor> {
    let bytes = fs::read(path)?;
    read_tensor(&mut bytes.as_slice())
}

pub fn save_mask(path: impl AsRef<Path>, mask: &ObservationMask) -> Result<()> {
    let mut buf = Vec::new();
    write_mask(&mut buf, mask)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<ObservationMask> {
    let bytes = fs::read(path)?;
    read_mask(&mut bytes.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tensor_layout_is_bit_exact() {
        let shape = TensorShape::new(vec![1, 2]).unwrap();
        let t = DenseTensor::new(shape, vec![1.0, -2.5]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        let mut expected = b"DTC1".to_vec();
        expected.extend_from_slice(&[2, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0]);
        expected.extend_from_slice(&1.0f64.to_le_bytes());
        expected.extend_from_slice(&(-2.5f64).to_le_bytes());
        assert_eq!(buf, expected);
    }

    #[test]
    fn mask_layout_is_bit_exact() {
        let shape = TensorShape::new(vec![2, 2]).unwrap();
        let m = ObservationMask::new(shape, vec![true, false, false, true]).unwrap();
        let mut buf = Vec::new();
        write_mask(&mut buf, &m).unwrap();
        assert_eq!(&buf[..4], b"DTM1");
        assert_eq!(&buf[16..], &[1, 0, 0, 1]);
        assert_eq!(read_mask(&mut buf.as_slice()).unwrap(), m);
    }

    #[test]
    fn rejects_wrong_magic_and_truncation() {
        let shape = TensorShape::new(vec![2, 2]).unwrap();
        let m = ObservationMask::full(shape.clone());
        let mut buf = Vec::new();
        write_mask(&mut buf, &m).unwrap();
        assert!(matches!(read_tensor(&mut buf.as_slice()), Err(Error::Format(_))));

        let t = DenseTensor::zeros(shape);
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        buf.pop();
        assert!(matches!(read_tensor(&mut buf.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn rejects_bad_mask_byte() {
        let mut buf = b"DTM1".to_vec();
        buf.extend_from_slice(&[2, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 2]);
        assert!(read_mask(&mut buf.as_slice()).is_err());
    }

    proptest! {
        #[test]
        fn tensor_round_trip(dims in prop::collection::vec(1usize..5, 2..4), seed in any::<u64>()) {
            let shape = TensorShape::new(dims).unwrap();
            let values = (0..shape.len()).map(|i| ((i as u64 ^ seed) % 1000) as f64 / 7.0 - 50.0).collect();
            let t = DenseTensor::new(shape, values).unwrap();
            let mut buf = Vec::new();
            write_tensor(&mut buf, &t).unwrap();
            prop_assert_eq!(read_tensor(&mut buf.as_slice()).unwrap(), t);
        }
    }
}
