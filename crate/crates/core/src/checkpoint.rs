//! Portable binary checkpoints.
//!
//! Layout: the magic bytes `LWVSR001`, a `u32` tensor count, then per tensor a
//! `u16` name length, the UTF-8 name, a `u8` rank, `rank` `u32` dims and the
//! `f32` data. All integers and floats are little-endian.

use std::collections::HashMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::Module;
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"LWVSR001";

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

pub fn write_tensors(mut w: impl Write, tensors: &[NamedTensor]) -> std::io::Result<()> {
    let invalid = |msg: String| std::io::Error::new(std::io::ErrorKind::InvalidInput, msg);
    w.write_all(MAGIC)?;
    let count = u32::try_from(tensors.len()).map_err(|_| invalid("too many tensors".into()))?;
    w.write_all(&count.to_le_bytes())?;
    for t in tensors {
        let name = t.name.as_bytes();
        let len = u16::try_from(name.len()).map_err(|_| invalid(format!("tensor name too long: {}", t.name)))?;
        let rank = u8::try_from(t.shape.len()).map_err(|_| invalid(format!("rank too large: {}", t.name)))?;
        if t.shape.iter().product::<usize>() != t.data.len() {
            return Err(invalid(format!("tensor {} has inconsistent shape", t.name)));
        }
        w.write_all(&len.to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&[rank])?;
        for &d in &t.shape {
            let d = u32::try_from(d).map_err(|_| invalid(format!("dimension too large: {}", t.name)))?;
            w.write_all(&d.to_le_bytes())?;
        }
        let mut bytes = Vec::with_capacity(4 * t.data.len());
        for v in &t.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&bytes)?;
    }
    Ok(())
}

fn take<'a>(buf: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if buf.len() < n {
        return Err(Error::Format("unexpected end of data".into()));
    }
    let (head, tail) = buf.split_at(n);
    *buf = tail;
    Ok(head)
}

pub fn parse_tensors(bytes: &[u8]) -> Result<Vec<NamedTensor>> {
    let mut buf = bytes;
    if take(&mut buf, 8)? != MAGIC {
        return Err(Error::Format("missing LWVSR001 magic".into()));
    }
    let count = u32::from_le_bytes(take(&mut buf, 4)?.try_into().unwrap());
    let mut tensors = Vec::new();
    for _ in 0..count {
        let len = u16::from_le_bytes(take(&mut buf, 2)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(take(&mut buf, len)?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = take(&mut buf, 1)?[0] as usize;
        let shape: Vec<usize> = (0..rank)
            .map(|_| Ok(u32::from_le_bytes(take(&mut buf, 4)?.try_into().unwrap()) as usize))
            .collect::<Result<_>>()?;
        let numel: usize = shape.iter().product();
        let data = take(&mut buf, 4 * numel)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(NamedTensor { name, shape, data });
    }
    if !buf.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes", buf.len())));
    }
    Ok(tensors)
}

pub fn read_tensors(mut r: impl Read) -> Result<Vec<NamedTensor>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::Format(e.to_string()))?;
    parse_tensors(&bytes)
}

/// Every parameter and buffer of `module`, in registry order.
pub fn collect<T: Scalar, M: Module<T> + ?Sized>(module: &M) -> Vec<NamedTensor> {
    let mut out = Vec::new();
    module.visit(&mut |p| {
        out.push(NamedTensor {
            name: p.name.clone(),
            shape: p.tensor.shape().to_vec(),
            data: p.tensor.data().iter().map(|v| v.to_f64_lossy() as f32).collect(),
        })
    });
    out
}

/// Copies checkpoint tensors into `module`; fails on the first missing, extra or mis-shaped tensor.
pub fn restore<T: Scalar, M: Module<T> + ?Sized>(module: &mut M, tensors: Vec<NamedTensor>) -> Result<()> {
    let mut by_name: HashMap<String, NamedTensor> = HashMap::new();
    let mut order = Vec::new();
    for t in tensors {
        order.push(t.name.clone());
        if by_name.insert(t.name.clone(), t).is_some() {
            let name = order.pop().unwrap();
            return Err(Error::CheckpointMismatch { name, detail: "appears twice in the checkpoint".into() });
        }
    }
    let mut expected = Vec::new();
    module.visit(&mut |p| expected.push((p.name.clone(), p.tensor.shape().to_vec())));
    for (name, shape) in &expected {
        match by_name.get(name) {
            None => {
                return Err(Error::CheckpointMismatch { name: name.clone(), detail: "missing from the checkpoint".into() })
            }
            Some(t) if &t.shape != shape => {
                return Err(Error::CheckpointMismatch {
                    name: name.clone(),
                    detail: format!("checkpoint shape {:?}, model shape {shape:?}", t.shape),
                })
            }
            Some(_) => {}
        }
    }
    if let Some(extra) = order.iter().find(|n| !expected.iter().any(|(e, _)| e == *n)) {
        return Err(Error::CheckpointMismatch { name: extra.clone(), detail: "not a parameter of the model".into() });
    }
    module.visit_mut(&mut |p| {
        let t = &by_name[&p.name];
        for (dst, &src) in p.tensor.data_mut().iter_mut().zip(&t.data) {
            *dst = T::from_f64_lossy(src as f64);
        }
    });
    Ok(())
}

pub fn save<T: Scalar, M: Module<T> + ?Sized>(module: &M, path: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    write_tensors(&mut bytes, &collect(module)).map_err(|e| Error::io(path, e))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load<T: Scalar, M: Module<T> + ?Sized>(module: &mut M, path: &Path) -> Result<()> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    restore(module, parse_tensors(&bytes)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conv::ConvDescriptor;
    use crate::nn::{Activation, ConvBnAct, Init};

    fn layer(seed: u64, out: usize) -> ConvBnAct<f32> {
        ConvBnAct::new("l", ConvDescriptor::new([3], 2, out), Activation::Relu, &mut Init::seeded(seed)).unwrap()
    }

    #[test]
    fn byte_layout() {
        let t = NamedTensor { name: "ab".into(), shape: vec![2], data: vec![1.0, -2.0] };
        let mut bytes = Vec::new();
        write_tensors(&mut bytes, std::slice::from_ref(&t)).unwrap();
        let mut expected = b"LWVSR001".to_vec();
        expected.extend([1, 0, 0, 0, 2, 0, b'a', b'b', 1, 2, 0, 0, 0]);
        expected.extend(1.0f32.to_le_bytes());
        expected.extend((-2.0f32).to_le_bytes());
        assert_eq!(bytes, expected);
        assert_eq!(parse_tensors(&bytes).unwrap(), vec![t]);
        assert!(parse_tensors(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn restore_round_trip_and_mismatch() {
        let src = layer(1, 4);
        let mut dst = layer(2, 4);
        restore(&mut dst, collect(&src)).unwrap();
        assert_eq!(collect(&dst), collect(&src));
        let mut wrong = layer(3, 5);
        match restore(&mut wrong, collect(&src)) {
            Err(Error::CheckpointMismatch { name, .. }) => assert_eq!(name, "l.conv.weight"),
            other => panic!("{other:?}"),
        }
    }
}
