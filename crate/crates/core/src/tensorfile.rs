//! Named-tensor container ("RWTS") shared by model weights and optimizer state.

use std::fs;
use std::path::Path;

use recnet_tensor::Tensor;

use crate::bytes::{put_f32s, Reader};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"RWTS";
const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor<f32>,
}

pub fn encode_tensors(profile_id: u16, tensors: &[NamedTensor]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&profile_id.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        let name = t.name.as_bytes();
        let name_len = u16::try_from(name.len())
            .map_err(|_| Error::InvalidArgument(format!("tensor name too long: {}", t.name)))?;
        let rank = u8::try_from(t.tensor.shape().len())
            .map_err(|_| Error::InvalidArgument(format!("tensor {} has too many dims", t.name)))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name);
        out.push(rank);
        for &d in t.tensor.shape() {
            let d = u32::try_from(d)
                .map_err(|_| Error::InvalidArgument(format!("tensor {} dim {d} too large", t.name)))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        put_f32s(&mut out, t.tensor.data());
    }
    Ok(out)
}

pub fn decode_tensors(bytes: &[u8]) -> Result<(u16, Vec<NamedTensor>)> {
    let mut r = Reader::new("tensor file", bytes);
    r.expect_magic(MAGIC)?;
    let version = r.u16()?;
    if version != VERSION {
        return Err(r.error(format!("unsupported version {version}")));
    }
    let profile_id = r.u16()?;
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let at = r.offset();
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::format("tensor file", at, "tensor name is not UTF-8"))?
            .to_string();
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let len = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| r.error(format!("tensor {name} shape {shape:?} overflows")))?;
        let data = r.f32s(len)?;
        let tensor = Tensor::new(&shape, data)?;
        tensors.push(NamedTensor { name, tensor });
    }
    if r.remaining() != 0 {
        return Err(r.error(format!("{} trailing bytes", r.remaining())));
    }
    Ok((profile_id, tensors))
}

pub fn write_tensors(path: impl AsRef<Path>, profile_id: u16, tensors: &[NamedTensor]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_tensors(profile_id, tensors)?).map_err(|e| Error::io(path, e))
}

pub fn read_tensors(path: impl AsRef<Path>) -> Result<(u16, Vec<NamedTensor>)> {
    let path = path.as_ref();
    decode_tensors(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
