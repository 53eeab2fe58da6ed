//! FHCK checkpoints: magic, version u32, tensor count u32, then per tensor a
//! u16-prefixed name, rank u8, u32 extents and little-endian f64 values.

use crate::error::{Error, Result};
use crate::numerics::{Tensor, MAX_RANK};
use crate::wire::{Reader, Writer};
use std::path::Path;

pub const FHCK_MAGIC: [u8; 4] = *b"FHCK";
pub const FHCK_VERSION: u32 = 1;

pub fn encode_checkpoint(tensors: &[(String, Tensor)]) -> Result<Vec<u8>> {
    let mut w = Writer::default();
    w.bytes(&FHCK_MAGIC);
    w.u32(FHCK_VERSION);
    w.u32(tensors.len() as u32);
    for (name, t) in tensors {
        w.name(name)?;
        w.u8(t.rank() as u8);
        for &e in t.shape() {
            w.u32(e as u32);
        }
        for &x in t.data() {
            w.f64(x);
        }
    }
    Ok(w.into_inner())
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader::new(bytes, path);
    r.magic(&FHCK_MAGIC)?;
    let version = r.u32()?;
    if version != FHCK_VERSION {
        return Err(Error::format(path, format!("unsupported FHCK version {version}")));
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name = r.name()?;
        let rank = r.u8()? as usize;
        if rank > MAX_RANK {
            return Err(Error::format(path, format!("tensor `{name}` has rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        if shape.contains(&0) {
            return Err(Error::format(path, format!("tensor `{name}` has a zero extent")));
        }
        let n: usize = shape.iter().product();
        if n > bytes.len() / 8 {
            return Err(Error::format(path, format!("tensor `{name}` is larger than the file")));
        }
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(r.f64()?);
        }
        out.push((name, Tensor::new(&shape, data)?));
    }
    r.finish()?;
    Ok(out)
}

pub fn save_checkpoint(tensors: &[(String, Tensor)], path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(tensors)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}
