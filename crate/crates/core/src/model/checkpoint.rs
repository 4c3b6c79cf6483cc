//! Checkpoint container. One binary file holds the configuration (as
//! canonical text plus its hash), the normalization statistics, and every
//! named parameter tensor:
//!
//! ```text
//! magic       4 bytes   "STCG"
//! version     u16  LE   currently 1
//! config hash u64  LE   FNV-1a over the config text
//! config len  u32  LE
//! config text ..        canonical key-sorted `key=value` lines
//! features    u32  LE   normalization stat count
//! means       f64  LE   one per feature
//! stds        f64  LE   one per feature
//! params      u32  LE   parameter record count
//! per record:
//!   name len  u32  LE
//!   name      ..        UTF-8
//!   rank      u32  LE
//!   dims      u32  LE   one per axis
//!   values    f32  LE   row-major, product(dims) of them
//! ```
//!
//! Values are stored as 32-bit reals; an f32 training run round-trips
//! bit-for-bit.

use std::path::Path;

use crate::model::{fnv1a, ModelConfig, ModelError};
use crate::substrate::{fmt_shape, ParamSet, Scalar, Tensor};

pub const MAGIC: [u8; 4] = *b"STCG";
pub const VERSION: u16 = 1;

/// Everything read back from a checkpoint file.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub norm_mean: Vec<f64>,
    pub norm_std: Vec<f64>,
    pub params: ParamSet<f32>,
}

impl Checkpoint {
    /// Rejects a checkpoint whose configuration differs from `expected`.
    pub fn ensure_config(&self, expected: &ModelConfig, path: &str) -> Result<(), ModelError> {
        if self.config.hash() != expected.hash() {
            let stored = self.config.canonical_text();
            let wanted = expected.canonical_text();
            let diff: Vec<String> = stored
                .lines()
                .zip(wanted.lines())
                .filter(|(s, w)| s != w)
                .map(|(s, w)| format!("{s} (expected {w})"))
                .collect();
            return Err(ModelError::Checkpoint {
                path: path.to_string(),
                reason: format!("configuration mismatch: {}", diff.join(", ")),
            });
        }
        Ok(())
    }

    /// Copies the stored values into a freshly built parameter set, checking
    /// that names and shapes line up record for record.
    pub fn bind_into<T: Scalar>(&self, target: &mut ParamSet<T>) -> Result<(), ModelError> {
        if self.params.len() != target.len() {
            return Err(ModelError::Config(format!(
                "checkpoint holds {} parameters, model expects {}",
                self.params.len(),
                target.len()
            )));
        }
        for (stored, slot) in self.params.iter().zip(target.iter_mut()) {
            if stored.name != slot.name {
                return Err(ModelError::Config(format!(
                    "checkpoint parameter {:?} where model expects {:?}",
                    stored.name, slot.name
                )));
            }
            if stored.value.shape() != slot.value.shape() {
                return Err(ModelError::Config(format!(
                    "parameter {:?} is {} in the checkpoint, {} in the model",
                    stored.name,
                    fmt_shape(stored.value.shape()),
                    fmt_shape(slot.value.shape())
                )));
            }
            slot.value = stored.value.cast::<T>();
        }
        Ok(())
    }
}

pub fn save<T: Scalar>(
    path: &Path,
    config: &ModelConfig,
    norm_mean: &[f64],
    norm_std: &[f64],
    params: &ParamSet<T>,
) -> Result<(), ModelError> {
    if norm_mean.len() != norm_std.len() {
        return Err(ModelError::Config(format!(
            "normalization stats disagree: {} means vs {} stds",
            norm_mean.len(),
            norm_std.len()
        )));
    }
    let text = config.canonical_text();
    let mut out: Vec<u8> = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&fnv1a(text.as_bytes()).to_le_bytes());
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(&(norm_mean.len() as u32).to_le_bytes());
    for &m in norm_mean {
        out.extend_from_slice(&m.to_le_bytes());
    }
    for &s in norm_std {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in p.value.data() {
            out.extend_from_slice(&(Scalar::to_f64(v) as f32).to_le_bytes());
        }
    }
    std::fs::write(path, out).map_err(|e| ModelError::Checkpoint {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

pub fn load(path: &Path) -> Result<Checkpoint, ModelError> {
    let shown = path.display().to_string();
    let bytes = std::fs::read(path).map_err(|e| ModelError::Checkpoint {
        path: shown.clone(),
        reason: e.to_string(),
    })?;
    let mut r = Reader {
        bytes: &bytes,
        at: 0,
        path: &shown,
    };

    let magic = r.take(4, "magic bytes")?;
    if magic != MAGIC {
        return Err(r.bad(format!("wrong magic bytes {magic:02x?}, not a checkpoint")));
    }
    let version = r.u16("format version")?;
    if version != VERSION {
        return Err(r.bad(format!("unsupported format version {version}")));
    }
    let stored_hash = r.u64("config hash")?;
    let text_len = r.u32("config length")? as usize;
    let text_bytes = r.take(text_len, "config text")?.to_vec();
    if fnv1a(&text_bytes) != stored_hash {
        return Err(r.bad("config hash mismatch: file corrupted".to_string()));
    }
    let text = String::from_utf8(text_bytes)
        .map_err(|_| r.bad("config text is not UTF-8".to_string()))?;
    let config = ModelConfig::from_text(&text)?;

    let features = r.u32("normalization stat count")? as usize;
    let mut norm_mean = Vec::with_capacity(features);
    for _ in 0..features {
        norm_mean.push(r.f64("normalization mean")?);
    }
    let mut norm_std = Vec::with_capacity(features);
    for _ in 0..features {
        norm_std.push(r.f64("normalization std")?);
    }

    let count = r.u32("parameter count")? as usize;
    let mut params = ParamSet::new();
    for i in 0..count {
        let name_len = r.u32("parameter name length")? as usize;
        let name = String::from_utf8(r.take(name_len, "parameter name")?.to_vec())
            .map_err(|_| r.bad(format!("parameter {i} name is not UTF-8")))?;
        let rank = r.u32("parameter rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32("parameter dimension")? as usize);
        }
        let numel: usize = dims.iter().product();
        let mut values = Vec::with_capacity(numel);
        for _ in 0..numel {
            values.push(r.f32("parameter value")?);
        }
        let tensor = Tensor::new(dims, values)
            .map_err(|e| r.bad(format!("parameter {name:?}: {e}")))?;
        params
            .add(name, tensor)
            .map_err(|e| r.bad(format!("parameter record {i}: {e}")))?;
    }
    if r.at != bytes.len() {
        return Err(r.bad(format!(
            "{} trailing bytes after the last parameter record",
            bytes.len() - r.at
        )));
    }
    Ok(Checkpoint {
        config,
        norm_mean,
        norm_std,
        params,
    })
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
    path: &'a str,
}

impl<'a> Reader<'a> {
    fn bad(&self, reason: String) -> ModelError {
        ModelError::Checkpoint {
            path: self.path.to_string(),
            reason,
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], ModelError> {
        if self.at + n > self.bytes.len() {
            return Err(self.bad(format!(
                "truncated at byte {} while reading {what} ({n} bytes needed, {} left)",
                self.at,
                self.bytes.len() - self.at
            )));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16, ModelError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f32(&mut self, what: &str) -> Result<f32, ModelError> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64, ModelError> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}
