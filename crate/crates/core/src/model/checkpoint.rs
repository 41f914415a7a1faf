//! Binary checkpoint layout, all integers little-endian `u64`:
//!
//! ```text
//! "RTFN0001"
//! config length, config text (UTF-8 `key = value` lines)
//! parameter count
//! per parameter: name length, name, rank, extents..., f64 values
//! ```
//!
//! Running batch-norm statistics are stored alongside trainable weights.

use std::path::Path;

use super::{ModelConfig, RtfnModel};
use crate::error::{Result, RtfnError};

pub const MAGIC: &[u8; 8] = b"RTFN0001";

pub fn write_checkpoint(model: &RtfnModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    let cfg = model.config.to_text();
    put_u64(&mut out, cfg.len() as u64);
    out.extend_from_slice(cfg.as_bytes());
    let store = &model.store;
    put_u64(&mut out, store.len() as u64);
    for id in store.ids() {
        let name = store.name(id);
        put_u64(&mut out, name.len() as u64);
        out.extend_from_slice(name.as_bytes());
        let v = store.value(id);
        put_u64(&mut out, v.rank() as u64);
        for &d in v.shape() {
            put_u64(&mut out, d as u64);
        }
        for x in v.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<RtfnModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(RtfnError::Checkpoint("bad magic, not an RTFN0001 checkpoint".into()));
    }
    let cfg_len = r.len_field("config length")?;
    let cfg_text = std::str::from_utf8(r.take(cfg_len)?)
        .map_err(|_| RtfnError::Checkpoint("config block is not UTF-8".into()))?;
    let config = ModelConfig::from_text(cfg_text)
        .map_err(|e| RtfnError::Checkpoint(format!("invalid config block: {e}")))?;
    let mut model = RtfnModel::new(config)?;

    let count = r.len_field("parameter count")?;
    if count != model.store.len() {
        return Err(RtfnError::Checkpoint(format!(
            "checkpoint has {count} parameters, configuration implies {}",
            model.store.len()
        )));
    }
    let ids: Vec<_> = model.store.ids().collect();
    for id in ids {
        let name_len = r.len_field("name length")?;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| RtfnError::Checkpoint("parameter name is not UTF-8".into()))?;
        let expected = model.store.name(id);
        if name != expected {
            return Err(RtfnError::Checkpoint(format!(
                "expected parameter {expected}, found {name}"
            )));
        }
        let rank = r.len_field("rank")?;
        let shape = (0..rank)
            .map(|_| r.len_field("extent"))
            .collect::<Result<Vec<_>>>()?;
        let target = model.store.value_mut(id);
        if shape != target.shape() {
            return Err(RtfnError::Checkpoint(format!(
                "parameter {name} has shape {shape:?}, configuration implies {:?}",
                target.shape()
            )));
        }
        let n = target.len();
        let raw = r.take(n * 8)?;
        for (dst, chunk) in target.data_mut().iter_mut().zip(raw.chunks_exact(8)) {
            *dst = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        }
    }
    if r.pos != bytes.len() {
        return Err(RtfnError::Checkpoint(format!(
            "{} trailing bytes after the last parameter",
            bytes.len() - r.pos
        )));
    }
    Ok(model)
}

pub fn save_checkpoint(model: &RtfnModel, path: &Path) -> Result<()> {
    std::fs::write(path, write_checkpoint(model)).map_err(|e| RtfnError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<RtfnModel> {
    let bytes = std::fs::read(path).map_err(|e| RtfnError::io(path, e))?;
    read_checkpoint(&bytes)
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            RtfnError::Checkpoint(format!(
                "truncated: needed {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            ))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn len_field(&mut self, what: &str) -> Result<usize> {
        let raw = self.take(8)?;
        let v = u64::from_le_bytes(raw.try_into().expect("8 bytes"));
        usize::try_from(v)
            .ok()
            .filter(|&v| v <= self.bytes.len().saturating_mul(8))
            .ok_or_else(|| RtfnError::Checkpoint(format!("implausible {what} {v}")))
    }
}
