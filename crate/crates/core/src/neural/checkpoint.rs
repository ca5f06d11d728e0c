//! Versioned binary model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "ADNN" | version u32 | model tag u8
//! config json: len u32 | bytes (UTF-8)
//! tensor count u32
//! per tensor: name len u32 | name bytes | rows u32 | cols u32
//!             | rows·cols f64 values (row-major)
//! ```
//!
//! The model tag distinguishes checkpoint consumers (sequence classifier,
//! Boltzmann classifier, emotion classifier); the JSON blob carries the
//! architecture config needed to rebuild the model before loading.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::matrix::Matrix;

use super::{NeuralError, TensorBag};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ADNN";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Checkpoint consumer tags.
pub const MODEL_TAG_LSTM: u8 = 0;
pub const MODEL_TAG_DBM: u8 = 1;
pub const MODEL_TAG_EMOTION: u8 = 2;

fn io_err(path: &Path, source: std::io::Error) -> NeuralError {
    NeuralError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn corrupt(path: &Path, reason: impl Into<String>) -> NeuralError {
    NeuralError::Checkpoint {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

/// Serializes a model's saved tensors plus its config JSON.
pub fn save_checkpoint<M: TensorBag + ?Sized>(
    path: &Path,
    model_tag: u8,
    config_json: &str,
    model: &mut M,
) -> Result<(), NeuralError> {
    let mut tensors: Vec<(String, Matrix)> = Vec::new();
    model.for_each_saved_tensor(&mut |name, t| tensors.push((name.to_string(), t.clone())));

    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.push(model_tag);
    let cfg = config_json.as_bytes();
    buf.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    buf.extend_from_slice(cfg);
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in &tensors {
        let nb = name.as_bytes();
        buf.extend_from_slice(&(nb.len() as u32).to_le_bytes());
        buf.extend_from_slice(nb);
        buf.extend_from_slice(&(t.rows() as u32).to_le_bytes());
        buf.extend_from_slice(&(t.cols() as u32).to_le_bytes());
        for v in t.as_slice() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| io_err(path, e))?;
        }
    }
    let mut file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    file.write_all(&buf).map_err(|e| io_err(path, e))?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NeuralError> {
        if self.pos + n > self.bytes.len() {
            return Err(corrupt(self.path, "truncated checkpoint"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NeuralError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Reads a checkpoint into (model tag, config JSON, tensors by name).
pub fn load_checkpoint_raw(
    path: &Path,
) -> Result<(u8, String, HashMap<String, Matrix>), NeuralError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path,
    };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(corrupt(path, "bad magic (not an ADNN checkpoint)"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(corrupt(
            path,
            format!("version {version}, expected {CHECKPOINT_VERSION}"),
        ));
    }
    let tag = r.take(1)?[0];
    let cfg_len = r.u32()? as usize;
    let config = String::from_utf8(r.take(cfg_len)?.to_vec())
        .map_err(|_| corrupt(path, "config blob is not UTF-8"))?;
    let count = r.u32()? as usize;
    let mut map = HashMap::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| corrupt(path, "tensor name is not UTF-8"))?;
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            let b = r.take(8)?;
            data.push(f64::from_le_bytes([
                b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7],
            ]));
        }
        if map.insert(name.clone(), Matrix::from_vec(rows, cols, data)).is_some() {
            return Err(corrupt(path, format!("duplicate tensor {name:?}")));
        }
    }
    if r.pos != bytes.len() {
        return Err(corrupt(path, "trailing bytes after last tensor"));
    }
    Ok((tag, config, map))
}

/// Fills a freshly built model's saved tensors from a raw checkpoint map.
/// Every model tensor must be present with a matching shape, and every
/// checkpoint tensor must be consumed.
pub fn load_into<M: TensorBag + ?Sized>(
    path: &Path,
    model: &mut M,
    mut tensors: HashMap<String, Matrix>,
) -> Result<(), NeuralError> {
    let mut problem: Option<NeuralError> = None;
    model.for_each_saved_tensor(&mut |name, t| {
        if problem.is_some() {
            return;
        }
        match tensors.remove(name) {
            None => problem = Some(corrupt(path, format!("missing tensor {name:?}"))),
            Some(stored) => {
                if stored.rows() != t.rows() || stored.cols() != t.cols() {
                    problem = Some(corrupt(
                        path,
                        format!(
                            "tensor {name:?} is {}x{}, expected {}x{}",
                            stored.rows(),
                            stored.cols(),
                            t.rows(),
                            t.cols()
                        ),
                    ));
                } else {
                    *t = stored;
                }
            }
        }
    });
    if let Some(e) = problem {
        return Err(e);
    }
    if let Some(extra) = tensors.keys().next() {
        return Err(corrupt(path, format!("unexpected tensor {extra:?}")));
    }
    Ok(())
}
