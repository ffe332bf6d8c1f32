//! Checkpoint container: named f64 tensors in a little-endian binary layout
//! with an embedded JSON metadata block.
//!
//! Layout:
//!
//! ```text
//! magic "RRCK" | version u32 | meta_len u64 | meta JSON bytes
//! tensor_count u64
//! per tensor: name_len u64 | name bytes | dtype u8 (1 = f64)
//!             | ndim u64 | dims u64 * ndim | payload f64 * prod(dims)
//! ```
//!
//! Tensors are written in sorted name order, so identical state always
//! produces identical bytes. Optimizer moments ride along as
//! `adam.m.<param>` / `adam.v.<param>`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{ParameterStore, Tensor};

const MAGIC: &[u8; 4] = b"RRCK";
const VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0} is not a checkpoint (bad magic)")]
    BadMagic(String),
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("unsupported dtype tag {0}")]
    BadDtype(u8),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("metadata error: {0}")]
    Meta(#[from] serde_json::Error),
    #[error(transparent)]
    Store(#[from] crate::autodiff::DiffError),
}

type CpResult<T> = std::result::Result<T, CheckpointError>;

/// Run context stored next to the tensors.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckpointMeta {
    /// Epochs completed when the snapshot was taken.
    pub epoch: usize,
    /// Hash of the fully resolved run configuration.
    pub config_hash: String,
    /// Base RNG seed; together with the epoch it pins every stream.
    pub seed: u64,
    /// Optimizer step count.
    pub adam_step: u64,
}

pub fn save(path: &Path, store: &ParameterStore, meta: &CheckpointMeta) -> CpResult<()> {
    let display = path.display().to_string();
    let io_err = |source| CheckpointError::Io { path: display.clone(), source };
    let file = File::create(path).map_err(|source| CheckpointError::Io { path: display.clone(), source })?;
    let mut w = BufWriter::new(file);

    let mut tensors: BTreeMap<String, &Tensor> = BTreeMap::new();
    for (name, value) in store.iter() {
        tensors.insert(name.to_string(), value);
        let (m, v) = store.moments_of(name)?;
        tensors.insert(format!("adam.m.{name}"), m);
        tensors.insert(format!("adam.v.{name}"), v);
    }

    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io_err)?;
    let meta_bytes = serde_json::to_vec(meta)?;
    w.write_all(&(meta_bytes.len() as u64).to_le_bytes()).map_err(io_err)?;
    w.write_all(&meta_bytes).map_err(io_err)?;
    w.write_all(&(tensors.len() as u64).to_le_bytes()).map_err(io_err)?;
    for (name, tensor) in &tensors {
        w.write_all(&(name.len() as u64).to_le_bytes()).map_err(io_err)?;
        w.write_all(name.as_bytes()).map_err(io_err)?;
        w.write_all(&[DTYPE_F64]).map_err(io_err)?;
        w.write_all(&(tensor.ndim() as u64).to_le_bytes()).map_err(io_err)?;
        for &dim in tensor.shape() {
            w.write_all(&(dim as u64).to_le_bytes()).map_err(io_err)?;
        }
        for &v in tensor.data() {
            w.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

/// All tensors by name plus the metadata block.
pub fn load_raw(path: &Path) -> CpResult<(BTreeMap<String, Tensor>, CheckpointMeta)> {
    let display = path.display().to_string();
    let io_err = |source| CheckpointError::Io { path: display.clone(), source };
    let file = File::open(path).map_err(|source| CheckpointError::Io { path: display.clone(), source })?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic(display));
    }
    let version = read_u32(&mut r, &display)?;
    if version != VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let meta_len = read_u64(&mut r, &display)? as usize;
    let mut meta_bytes = vec![0u8; meta_len];
    r.read_exact(&mut meta_bytes).map_err(io_err)?;
    let meta: CheckpointMeta = serde_json::from_slice(&meta_bytes)?;

    let count = read_u64(&mut r, &display)? as usize;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let name_len = read_u64(&mut r, &display)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes).map_err(io_err)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| CheckpointError::Corrupt("tensor name is not utf-8".into()))?;
        let mut dtype = [0u8; 1];
        r.read_exact(&mut dtype).map_err(io_err)?;
        if dtype[0] != DTYPE_F64 {
            return Err(CheckpointError::BadDtype(dtype[0]));
        }
        let ndim = read_u64(&mut r, &display)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u64(&mut r, &display)? as usize);
        }
        let total: usize = shape.iter().product();
        let mut data = Vec::with_capacity(total);
        let mut buf = [0u8; 8];
        for _ in 0..total {
            r.read_exact(&mut buf).map_err(io_err)?;
            data.push(f64::from_le_bytes(buf));
        }
        tensors.insert(name, Tensor::new(shape, data));
    }
    Ok((tensors, meta))
}

/// Rebuild a parameter store (values, moments, step count) from a
/// checkpoint.
pub fn load_store(path: &Path) -> CpResult<(ParameterStore, CheckpointMeta)> {
    let (mut tensors, meta) = load_raw(path)?;
    let param_names: Vec<String> = tensors
        .keys()
        .filter(|n| !n.starts_with("adam.m.") && !n.starts_with("adam.v."))
        .cloned()
        .collect();
    let mut store = ParameterStore::new();
    for name in &param_names {
        let value = tensors.remove(name).expect("listed above");
        store.insert(name, value)?;
        let m = tensors
            .remove(&format!("adam.m.{name}"))
            .ok_or_else(|| CheckpointError::Corrupt(format!("missing first moment for '{name}'")))?;
        let v = tensors
            .remove(&format!("adam.v.{name}"))
            .ok_or_else(|| CheckpointError::Corrupt(format!("missing second moment for '{name}'")))?;
        store.restore_moments(name, m, v)?;
    }
    store.set_step_count(meta.adam_step);
    Ok((store, meta))
}

fn read_u32(r: &mut impl Read, path: &str) -> CpResult<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|source| CheckpointError::Io { path: path.to_string(), source })?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read, path: &str) -> CpResult<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|source| CheckpointError::Io { path: path.to_string(), source })?;
    Ok(u64::from_le_bytes(buf))
}
