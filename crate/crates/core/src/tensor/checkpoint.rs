//! Checkpoint file: `EGOCKPT1`, a little-endian `u64` manifest length, a
//! JSON manifest, then the raw little-endian tensor blob.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DType, Element, ParamStore, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"EGOCKPT1";

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    dtype: DType,
    byte_offset: u64,
    byte_length: u64,
    kind: EntryKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum EntryKind {
    Param,
    Buffer,
    AdamM,
    AdamV,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    step: u64,
    meta: BTreeMap<String, String>,
    tensors: Vec<Entry>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint<T: Element = f32> {
    pub store: ParamStore<T>,
    pub meta: BTreeMap<String, String>,
}

pub fn write_checkpoint<T: Element>(
    mut w: impl Write,
    store: &ParamStore<T>,
    meta: &BTreeMap<String, String>,
) -> Result<()> {
    let mut blob = Vec::new();
    let mut tensors = Vec::new();
    let mut push = |name: &str, t: &Tensor<T>, kind: EntryKind, blob: &mut Vec<u8>| {
        let offset = blob.len() as u64;
        t.data().iter().for_each(|v| v.write_le(blob));
        tensors.push(Entry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            dtype: T::DTYPE,
            byte_offset: offset,
            byte_length: blob.len() as u64 - offset,
            kind,
        });
    };
    for (name, p) in store.iter() {
        let kind = if p.trainable { EntryKind::Param } else { EntryKind::Buffer };
        push(name, &p.value, kind, &mut blob);
        if p.trainable {
            push(name, &p.m, EntryKind::AdamM, &mut blob);
            push(name, &p.v, EntryKind::AdamV, &mut blob);
        }
    }
    let manifest = Manifest { step: store.step_count(), meta: meta.clone(), tensors };
    let text = serde_json::to_vec(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&(text.len() as u64).to_le_bytes())?;
    w.write_all(&text)?;
    w.write_all(&blob)?;
    Ok(())
}

pub fn read_checkpoint<T: Element>(mut r: impl Read) -> Result<Checkpoint<T>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let mut text = vec![0u8; u64::from_le_bytes(len) as usize];
    r.read_exact(&mut text)?;
    let manifest: Manifest =
        serde_json::from_slice(&text).map_err(|e| Error::Format(e.to_string()))?;
    let mut blob = Vec::new();
    r.read_to_end(&mut blob)?;

    let mut store = ParamStore::new();
    let mut pending = Vec::new();
    for e in &manifest.tensors {
        if e.dtype != T::DTYPE {
            return Err(Error::Format(format!(
                "tensor {:?} is {:?}, expected {:?}",
                e.name,
                e.dtype,
                T::DTYPE
            )));
        }
        let (start, end) = (e.byte_offset as usize, (e.byte_offset + e.byte_length) as usize);
        if end > blob.len() {
            return Err(Error::Format(format!("tensor {:?} runs past the blob", e.name)));
        }
        let width = T::DTYPE.size();
        let data = blob[start..end].chunks_exact(width).map(T::read_le).collect();
        let t = Tensor::new(&e.shape, data)?;
        match e.kind {
            EntryKind::Param => store.insert(&e.name, t)?,
            EntryKind::Buffer => store.insert_buffer(&e.name, t)?,
            EntryKind::AdamM | EntryKind::AdamV => pending.push((e.name.clone(), e.kind, t)),
        }
    }
    for (name, kind, t) in pending {
        let (m, v) = store
            .moments_mut(&name)
            .ok_or_else(|| Error::Format(format!("moment for unknown tensor {name:?}")))?;
        let slot = if kind == EntryKind::AdamM { m } else { v };
        if slot.shape() != t.shape() {
            return Err(Error::Format(format!("moment shape mismatch for {name:?}")));
        }
        *slot = t;
    }
    store.set_step_count(manifest.step);
    Ok(Checkpoint { store, meta: manifest.meta })
}

pub fn save_checkpoint<T: Element>(
    path: &Path,
    store: &ParamStore<T>,
    meta: &BTreeMap<String, String>,
) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, store, meta)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint<T: Element>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = fs::read(path)?;
    read_checkpoint(bytes.as_slice())
}
