//! Binary weight archive.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"FNL1"  u32 entry_count
//! entry := u16 name_len, name (utf-8), u8 rank, u32 dims[rank], f32 data[prod(dims)]
//! ```
//!
//! Entries hold every param plus batch-norm running statistics.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

use super::network::{Component, Model};

pub const MAGIC: &[u8; 4] = b"FNL1";

/// Which model tensors a load is expected to cover.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadScope {
    /// Every tensor, or exactly the backbone tensors.
    Any,
    /// Exactly the backbone tensors; other entries are rejected.
    BackboneOnly,
}

/// Parsed archive: name to tensor, in file order.
pub type Entries = Vec<(String, Tensor<f32>)>;

pub fn encode(entries: &[(String, Tensor<f32>)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&u32::try_from(entries.len()).map_err(|_| Error::Format("too many entries".into()))?.to_le_bytes());
    for (name, t) in entries {
        let n = u16::try_from(name.len()).map_err(|_| Error::Format(format!("name too long: {name}")))?;
        out.extend_from_slice(&n.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(u8::try_from(t.rank()).map_err(|_| Error::Format(format!("{name}: rank too large")))?);
        for &d in t.dims() {
            let d = u32::try_from(d).map_err(|_| Error::Format(format!("{name}: extent too large")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode(buf: &[u8]) -> Result<Entries> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("not a weight archive (bad magic)".into()));
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    let mut seen = BTreeSet::new();
    for _ in 0..count {
        let n = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(n)?)
            .map_err(|_| Error::Format("entry name is not utf-8".into()))?
            .to_string();
        if !seen.insert(name.clone()) {
            return Err(Error::Format(format!("duplicate entry {name}")));
        }
        let rank = r.u8()? as usize;
        let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let len = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let len = len.ok_or_else(|| Error::Format(format!("{name}: dims overflow")))?;
        let bytes = r.take(len.checked_mul(4).ok_or_else(|| Error::Format(format!("{name}: too large")))?)?;
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        let t = Tensor::new(&dims, data).map_err(|e| Error::Format(format!("{name}: {e}")))?;
        out.push((name, t));
    }
    if r.pos != buf.len() {
        return Err(Error::Format(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    Ok(out)
}

/// Writes every model tensor, atomically (temp file then rename).
pub fn save_weights<T: Scalar>(model: &Model<T>, path: &Path) -> Result<()> {
    let entries: Entries = model.named_tensors().into_iter().map(|(n, t)| (n, t.cast())).collect();
    let bytes = encode(&entries)?;
    let tmp = path.with_extension("fnl.tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).and_then(|_| f.sync_all()).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_archive(path: &Path) -> Result<Entries> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| Error::Load(format!("{}: {e}", path.display())))
}

/// Loads every tensor from `path`, or only the backbone when the archive
/// holds exactly the backbone tensors.
pub fn load_weights<T: Scalar>(model: &mut Model<T>, path: &Path) -> Result<()> {
    load_weights_scoped(model, path, LoadScope::Any)
}

pub fn load_weights_scoped<T: Scalar>(model: &mut Model<T>, path: &Path, scope: LoadScope) -> Result<()> {
    let entries = read_archive(path)?;
    apply_entries(model, entries, scope).map_err(|e| match e {
        Error::Load(m) => Error::Load(format!("{}: {m}", path.display())),
        e => e,
    })
}

/// Validates `entries` against the model fully before writing anything.
pub fn apply_entries<T: Scalar>(model: &mut Model<T>, entries: Entries, scope: LoadScope) -> Result<()> {
    let expected: BTreeMap<String, Vec<usize>> =
        model.named_tensors().into_iter().map(|(n, t)| (n, t.dims().to_vec())).collect();
    let mut problems = Vec::new();
    for (name, t) in &entries {
        match expected.get(name) {
            None => problems.push(format!("unexpected entry {name}")),
            Some(d) if d.as_slice() != t.dims() => {
                problems.push(format!("{name}: archive dims {:?}, model dims {d:?}", t.dims()))
            }
            Some(_) => {}
        }
    }
    let given: BTreeSet<&str> = entries.iter().map(|(n, _)| n.as_str()).collect();
    let backbone: BTreeSet<&str> = expected
        .keys()
        .map(String::as_str)
        .filter(|n| Component::of(n) == Some(Component::Backbone))
        .collect();
    let full: BTreeSet<&str> = expected.keys().map(String::as_str).collect();
    let target = match scope {
        LoadScope::BackboneOnly => &backbone,
        LoadScope::Any if given.iter().all(|n| backbone.contains(n)) => &backbone,
        LoadScope::Any => &full,
    };
    for n in target.difference(&given) {
        problems.push(format!("missing entry {n}"));
    }
    if scope == LoadScope::BackboneOnly {
        for n in given.difference(&backbone) {
            if expected.contains_key(*n) {
                problems.push(format!("non-backbone entry {n}"));
            }
        }
    }
    if !problems.is_empty() {
        return Err(Error::Load(problems.join("; ")));
    }
    let mut by_name: BTreeMap<String, Tensor<f32>> = entries.into_iter().collect();
    for (name, dst) in model.named_tensors_mut() {
        if let Some(src) = by_name.remove(&name) {
            *dst = src.cast();
        }
    }
    Ok(())
}
