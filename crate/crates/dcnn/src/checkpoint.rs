//! WBCK checkpoints: magic, version, length-prefixed JSON config, then named
//! f32 tensors until the end of the file.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelWeights};
use crate::scalar::Scalar;

const MAGIC: &[u8; 4] = b"WBCK";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint<T: Scalar>(w: &ModelWeights<T>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let config = serde_json::to_vec(w.config())?;
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    for (name, dims, values) in w.tensors() {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(dims.len() as u8);
        for d in dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in values {
            out.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::BadCheckpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Decodes a checkpoint; with `expected` set, a different embedded config is
/// a [`Error::ConfigMismatch`].
pub fn decode_checkpoint(bytes: &[u8], expected: Option<&ModelConfig>) -> Result<ModelWeights<f32>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::BadCheckpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::BadCheckpoint(format!("unsupported version {version}")));
    }
    let len = r.u32()? as usize;
    let config: ModelConfig = serde_json::from_slice(r.take(len)?)?;
    config.validate()?;
    if let Some(e) = expected {
        if *e != config {
            return Err(Error::ConfigMismatch {
                expected: serde_json::to_string(e)?,
                found: serde_json::to_string(&config)?,
            });
        }
    }

    let mut stored = Vec::new();
    while r.pos < bytes.len() {
        let n = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes")) as usize;
        let name = String::from_utf8(r.take(n)?.to_vec()).map_err(|_| Error::BadCheckpoint("tensor name is not UTF-8".into()))?;
        let rank = r.take(1)?[0] as usize;
        let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let count: usize = dims.iter().product();
        let values: Vec<f32> = r
            .take(count.checked_mul(4).ok_or_else(|| Error::BadCheckpoint("tensor too large".into()))?)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::BadCheckpoint(format!("non-finite value in `{name}`")));
        }
        stored.push((name, dims, values));
    }

    let mut w = ModelWeights::<f32>::zeros(&config)?;
    let layout: Vec<(String, Vec<usize>)> = w.tensors().into_iter().map(|(n, d, _)| (n, d)).collect();
    if stored.len() != layout.len() {
        return Err(Error::BadCheckpoint(format!(
            "{} tensors stored, {} expected",
            stored.len(),
            layout.len()
        )));
    }
    for ((name, dims), (sname, sdims, _)) in layout.iter().zip(&stored) {
        if name != sname {
            return Err(Error::BadCheckpoint(format!("expected tensor `{name}`, found `{sname}`")));
        }
        if dims != sdims {
            return Err(Error::WeightShapeMismatch {
                name: name.clone(),
                expected: dims.clone(),
                got: sdims.clone(),
            });
        }
    }
    let mut src = stored.into_iter();
    w.for_each_tensor_mut(|_, dst| dst.copy_from_slice(&src.next().expect("checked length").2));
    Ok(w)
}

pub fn save_checkpoint<T: Scalar>(w: &ModelWeights<T>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_checkpoint(w)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>, expected: Option<&ModelConfig>) -> Result<ModelWeights<f32>> {
    decode_checkpoint(&fs::read(path)?, expected)
}
