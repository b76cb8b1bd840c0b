//! Versioned checkpoint container.
//!
//! Layout: 8-byte magic `FBLMCKPT`, `u32` format version, `u64` header
//! length, a JSON header (config, tokenizer alphabet, parameter names and
//! shapes), then every parameter's values as little-endian `f64` in header
//! order. Values are stored bit-exactly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;

use super::{LMConfig, LmError, Tokenizer, TransformerLM};

const MAGIC: &[u8; 8] = b"FBLMCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: LMConfig,
    tokenizer: Tokenizer,
    params: Vec<ParamEntry>,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

fn format_err(msg: impl Into<String>) -> LmError {
    LmError::Format(msg.into())
}

impl TransformerLM {
    pub fn to_bytes(&self) -> Result<Vec<u8>, LmError> {
        let named = self.params.named();
        let header = Header {
            config: self.config.clone(),
            tokenizer: self.tokenizer.clone(),
            params: named
                .iter()
                .map(|(name, t)| ParamEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let header = serde_json::to_vec(&header).map_err(|e| format_err(e.to_string()))?;
        let n_values: usize = named.iter().map(|(_, t)| t.len()).sum();
        let mut out = Vec::with_capacity(20 + header.len() + 8 * n_values);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, t) in named {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, LmError> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(format_err("not a model checkpoint (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(format_err(format!(
                "checkpoint version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes
            .get(20..20 + hlen)
            .ok_or_else(|| format_err("truncated checkpoint header"))?;
        let header: Header =
            serde_json::from_slice(body).map_err(|e| format_err(format!("header: {e}")))?;
        let mut model = TransformerLM::new(header.config, header.tokenizer)?;
        let mut offset = 20 + hlen;
        let mut named = model.params.named_mut();
        if named.len() != header.params.len() {
            return Err(format_err(format!(
                "checkpoint has {} parameters, model expects {}",
                header.params.len(),
                named.len()
            )));
        }
        for ((name, t), entry) in named.iter_mut().zip(&header.params) {
            if *name != entry.name || t.shape() != entry.shape.as_slice() {
                return Err(format_err(format!(
                    "parameter {} {:?} does not match expected {name} {:?}",
                    entry.name,
                    entry.shape,
                    t.shape()
                )));
            }
            let n = t.len();
            let raw = bytes
                .get(offset..offset + 8 * n)
                .ok_or_else(|| format_err(format!("truncated values for {name}")))?;
            let values: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            **t =
                Tensor::new(entry.shape.clone(), values).map_err(|e| format_err(e.to_string()))?;
            offset += 8 * n;
        }
        if offset != bytes.len() {
            return Err(format_err("trailing bytes after parameter data"));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), LmError> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LmError> {
        Self::from_bytes(&fs::read(path)?)
    }
}
