//! Binary parameter checkpoints.
//!
//! Layout (integers little-endian):
//!   magic "UGAN" | version u32 | entry count u32
//!   per entry: name length u16 | UTF-8 name | rank u8 | dims u32 each |
//!              values as raw 32-bit little-endian floats
//!
//! Entries are written in name order, so a store serializes to one exact byte
//! string. Values are narrowed to f32 on save; a save/load/save cycle is
//! byte-identical.

use super::idx::atomic_write;
use crate::error::{Error, Result};
use crate::nn::{ParamKind, ParamStore};
use crate::scalar::Real;
use crate::tensor::Tensor;
use std::fs;
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"UGAN";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint<T: Real>(store: &ParamStore<T>, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, entry) in store.iter() {
        let name_bytes = name.as_bytes();
        if name_bytes.len() > u16::MAX as usize {
            return Err(Error::Data(format!("parameter name too long: `{name}`")));
        }
        out.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
        out.extend_from_slice(name_bytes);
        let shape = entry.value.shape();
        out.push(shape.len() as u8);
        for &d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in entry.value.data() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    atomic_write(path, &out)
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<ParamStore<T>> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut off = 0usize;

    let take = |off: &mut usize, n: usize, what: &str| -> Result<&[u8]> {
        if *off + n > buf.len() {
            return Err(Error::parse(
                *off as u64,
                format!("truncated checkpoint while reading {what}"),
            ));
        }
        let s = &buf[*off..*off + n];
        *off += n;
        Ok(s)
    };

    let magic = take(&mut off, 4, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::parse(0, format!("bad checkpoint magic {magic:?}")));
    }
    let version = u32::from_le_bytes(take(&mut off, 4, "version")?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::parse(
            4,
            format!("unsupported checkpoint version {version}"),
        ));
    }
    let count = u32::from_le_bytes(take(&mut off, 4, "entry count")?.try_into().unwrap());

    let mut store = ParamStore::new();
    for i in 0..count {
        let name_len =
            u16::from_le_bytes(take(&mut off, 2, &format!("entry {i} name length"))?.try_into().unwrap());
        let name_bytes = take(&mut off, name_len as usize, &format!("entry {i} name"))?;
        let name = std::str::from_utf8(name_bytes)
            .map_err(|_| Error::parse(off as u64, format!("entry {i} name is not UTF-8")))?
            .to_string();
        let rank = take(&mut off, 1, &format!("entry `{name}` rank"))?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for d in 0..rank {
            let dim = u32::from_le_bytes(
                take(&mut off, 4, &format!("entry `{name}` dim {d}"))?
                    .try_into()
                    .unwrap(),
            );
            shape.push(dim as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = take(&mut off, numel * 4, &format!("entry `{name}` values"))?;
        let data: Vec<T> = raw
            .chunks_exact(4)
            .map(|c| T::from_f64(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect();
        let suffix = name.rsplit_once('.').map(|(_, s)| s).unwrap_or("");
        let kind = ParamKind::from_suffix(suffix).ok_or_else(|| {
            Error::parse(
                off as u64,
                format!("entry `{name}` has no recognizable parameter suffix"),
            )
        })?;
        store.insert(name, kind, Tensor::new(shape, data)?);
    }
    if off != buf.len() {
        return Err(Error::parse(
            off as u64,
            format!("{} trailing bytes after the last entry", buf.len() - off),
        ));
    }
    Ok(store)
}
