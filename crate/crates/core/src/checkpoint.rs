//! Binary checkpoint format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic  b"CAE1"
//! u32    format version (currently 1)
//! u32    config length, then that many bytes of UTF-8 JSON (ModelConfig)
//! per parameter, in build order:
//!   u32  name length, then UTF-8 name
//!   u32  rank, then rank x u64 dims
//!   f32  values, row-major
//! u8     optimizer flag (0 = absent, 1 = present)
//!   if present: per parameter, an `m` record then a `v` record in the same
//!   record format (named "<param>.m" / "<param>.v"), then u64 step counter
//! u32    CRC32 (IEEE) of every preceding byte
//! ```
//!
//! A save -> load round trip reproduces bitwise-identical parameters.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Autoencoder, ModelConfig};
use crate::optimize::Adam;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"CAE1";
const VERSION: u32 = 1;

/// Optimizer moments and step counter lifted out of a checkpoint. The Adam
/// hyperparameters are not persisted; the caller supplies them on resume.
#[derive(Clone, Debug)]
pub struct AdamSnapshot {
    pub m: Vec<Tensor<f32>>,
    pub v: Vec<Tensor<f32>>,
    pub step: u64,
}

impl AdamSnapshot {
    pub fn of(optimizer: &Adam<f32>) -> Self {
        let (m, v) = optimizer.moments();
        AdamSnapshot {
            m: m.to_vec(),
            v: v.to_vec(),
            step: optimizer.step_count(),
        }
    }
}

fn push_record(buf: &mut Vec<u8>, name: &str, tensor: &Tensor<f32>) {
    buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    buf.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
    for &d in tensor.shape() {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &x in tensor.data() {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

/// Serializes the model (and optionally its optimizer state) to `path`.
pub fn save_checkpoint(
    model: &Autoencoder<f32>,
    optimizer: Option<&AdamSnapshot>,
    path: &Path,
) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let config_json = serde_json::to_string(model.config())
        .map_err(|e| Error::Config(format!("config serialization failed: {e}")))?;
    buf.extend_from_slice(&(config_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(config_json.as_bytes());

    let params = model.params();
    for p in &params {
        push_record(&mut buf, &p.name, &p.value);
    }

    match optimizer {
        None => buf.push(0),
        Some(snap) => {
            if snap.m.len() != params.len() || snap.v.len() != params.len() {
                return Err(Error::Config(format!(
                    "optimizer tracks {} tensors but the model has {} parameters",
                    snap.m.len(),
                    params.len()
                )));
            }
            buf.push(1);
            for (i, p) in params.iter().enumerate() {
                push_record(&mut buf, &format!("{}.m", p.name), &snap.m[i]);
                push_record(&mut buf, &format!("{}.v", p.name), &snap.v[i]);
            }
            buf.extend_from_slice(&snap.step.to_le_bytes());
        }
    }

    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    fs::write(path, &buf).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::format(
                self.pos as u64,
                format!("truncated while reading {what} ({n} bytes needed)"),
            ));
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn record(&mut self) -> Result<(String, Tensor<f32>)> {
        let name_len = self.u32("record name length")? as usize;
        let at = self.pos;
        let name = std::str::from_utf8(self.take(name_len, "record name")?)
            .map_err(|_| Error::format(at as u64, "record name is not UTF-8"))?
            .to_string();
        let rank = self.u32("record rank")? as usize;
        if rank == 0 || rank > 8 {
            return Err(Error::format(
                (self.pos - 4) as u64,
                format!("implausible tensor rank {rank} in record '{name}'"),
            ));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut volume = 1usize;
        for _ in 0..rank {
            let d = self.u64("record dimension")? as usize;
            volume = volume.saturating_mul(d);
            shape.push(d);
        }
        let at = self.pos;
        let raw = self.take(volume * 4, "record values")?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let tensor = Tensor::new(shape, data).map_err(|e| {
            Error::format(at as u64, format!("invalid tensor in record '{name}': {e}"))
        })?;
        Ok((name, tensor))
    }
}

/// Loads a checkpoint, rebuilding the model from the embedded configuration
/// and validating magic, version, checksum, and the full shape table.
pub fn load_checkpoint(path: &Path) -> Result<(Autoencoder<f32>, Option<AdamSnapshot>)> {
    load_checkpoint_expecting(path, None)
}

/// Like [`load_checkpoint`], but additionally rejects checkpoints whose
/// structure differs from `expected` (input size, scale, bottleneck, kernel).
pub fn load_checkpoint_expecting(
    path: &Path,
    expected: Option<&ModelConfig>,
) -> Result<(Autoencoder<f32>, Option<AdamSnapshot>)> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    if buf.len() < 4 {
        return Err(Error::format(buf.len() as u64, "file shorter than magic"));
    }
    let body_len = buf
        .len()
        .checked_sub(4)
        .filter(|&n| n >= 4)
        .ok_or_else(|| Error::format(buf.len() as u64, "file too short for checksum"))?;
    let stored_crc = u32::from_le_bytes(buf[body_len..].try_into().unwrap());
    let actual_crc = crc32fast::hash(&buf[..body_len]);
    if stored_crc != actual_crc {
        return Err(Error::format(
            body_len as u64,
            format!("checksum mismatch: stored {stored_crc:#010x}, computed {actual_crc:#010x}"),
        ));
    }

    let mut r = Reader {
        buf: &buf[..body_len],
        pos: 0,
    };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::format(0, format!("bad magic {magic:?}")));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::format(
            4,
            format!("unsupported version {version} (expected {VERSION})"),
        ));
    }
    let config_len = r.u32("config length")? as usize;
    let at = r.pos;
    let config_bytes = r.take(config_len, "config JSON")?;
    let config: ModelConfig = serde_json::from_slice(config_bytes)
        .map_err(|e| Error::format(at as u64, format!("config JSON invalid: {e}")))?;
    config.validate()?;
    if let Some(want) = expected {
        if !want.same_structure(&config) {
            return Err(Error::Config(format!(
                "checkpoint structure {config:?} does not match the expected configuration {want:?}"
            )));
        }
    }

    let mut model = Autoencoder::<f32>::new(config)?;
    for p in model.params_mut() {
        let at = r.pos;
        let (name, tensor) = r.record()?;
        if name != p.name {
            return Err(Error::format(
                at as u64,
                format!("expected parameter '{}', found '{name}'", p.name),
            ));
        }
        if tensor.shape() != p.value.shape() {
            return Err(Error::Config(format!(
                "parameter '{name}' has shape {:?} but the configuration implies {:?}",
                tensor.shape(),
                p.value.shape()
            )));
        }
        p.value = tensor;
    }

    let flag = r.take(1, "optimizer flag")?[0];
    let optimizer = match flag {
        0 => None,
        1 => {
            let mut m = Vec::new();
            let mut v = Vec::new();
            let names: Vec<(String, Vec<usize>)> = model
                .params()
                .iter()
                .map(|p| (p.name.clone(), p.value.shape().to_vec()))
                .collect();
            for (name, shape) in &names {
                for (suffix, bucket) in [("m", &mut m), ("v", &mut v)] {
                    let at = r.pos;
                    let (got, tensor) = r.record()?;
                    let want = format!("{name}.{suffix}");
                    if got != want {
                        return Err(Error::format(
                            at as u64,
                            format!("expected optimizer record '{want}', found '{got}'"),
                        ));
                    }
                    if tensor.shape() != shape.as_slice() {
                        return Err(Error::Config(format!(
                            "optimizer record '{got}' has shape {:?}, parameter has {:?}",
                            tensor.shape(),
                            shape
                        )));
                    }
                    bucket.push(tensor);
                }
            }
            let step = r.u64("optimizer step counter")?;
            Some(AdamSnapshot { m, v, step })
        }
        other => {
            return Err(Error::format(
                (r.pos - 1) as u64,
                format!("optimizer flag must be 0 or 1, found {other}"),
            ));
        }
    };

    if r.pos != body_len {
        return Err(Error::format(
            r.pos as u64,
            format!("{} trailing bytes before checksum", body_len - r.pos),
        ));
    }
    Ok((model, optimizer))
}
