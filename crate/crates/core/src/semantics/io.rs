//! FHEB embedding table files.
//!
//! Layout (little-endian): magic `FHEB`, version u32, count u32, dim u32,
//! then per entry a u16 name length, the UTF-8 name and `dim` f32 values.

use super::{unit_on_ingest, EmbeddingTable};
use crate::error::{Error, Result};
use crate::wire::{Reader, Writer};
use std::collections::HashSet;
use std::path::Path;

pub const FHEB_MAGIC: [u8; 4] = *b"FHEB";
pub const FHEB_VERSION: u32 = 1;

pub fn encode_table(table: &EmbeddingTable) -> Result<Vec<u8>> {
    let mut w = Writer::default();
    w.bytes(&FHEB_MAGIC);
    w.u32(FHEB_VERSION);
    w.u32(table.len() as u32);
    w.u32(table.dim() as u32);
    for i in 0..table.len() {
        w.name(table.name(i))?;
        for &x in table.vector(i) {
            w.f32(x as f32);
        }
    }
    Ok(w.into_inner())
}

pub fn decode_table(bytes: &[u8], path: &Path) -> Result<EmbeddingTable> {
    let mut r = Reader::new(bytes, path);
    r.magic(&FHEB_MAGIC)?;
    let version = r.u32()?;
    if version != FHEB_VERSION {
        return Err(Error::format(path, format!("unsupported FHEB version {version}")));
    }
    let count = r.u32()? as usize;
    let dim = r.u32()? as usize;
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::format(path, format!("embedding dim must be positive and even, got {dim}")));
    }
    let mut names = Vec::with_capacity(count);
    let mut vectors = Vec::with_capacity(count);
    let mut seen = HashSet::new();
    for _ in 0..count {
        let name = r.name()?;
        if !seen.insert(name.clone()) {
            return Err(Error::Data(format!("duplicate embedding name `{name}` in {}", path.display())));
        }
        let mut v = Vec::with_capacity(dim);
        for _ in 0..dim {
            v.push(r.f32()? as f64);
        }
        unit_on_ingest(&name, &mut v)?;
        names.push(name);
        vectors.push(v);
    }
    r.finish()?;
    if count == 0 {
        return Err(Error::format(path, "table has no entries"));
    }
    Ok(EmbeddingTable { dim, names, vectors })
}

pub fn save_table(table: &EmbeddingTable, path: &Path) -> Result<()> {
    std::fs::write(path, encode_table(table)?).map_err(|e| Error::io(path, e))
}

pub fn load_table(path: &Path) -> Result<EmbeddingTable> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_table(&bytes, path)
}
