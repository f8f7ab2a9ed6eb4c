//! Versioned single-file checkpoint: magic header, JSON metadata block,
//! then raw little-endian f64 weight data in metadata order.

use super::{net, CmnModel, ModelConfig, Vocab};
use crate::error::{CmnError, Result};
use serde::{Deserialize, Serialize};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8] = b"CMN-CKPT-v1\n";
const MAX_HEADER_BYTES: u64 = 64 * 1024 * 1024;

#[derive(Serialize, Deserialize)]
struct ParamMeta {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab: Vec<String>,
    params: Vec<ParamMeta>,
}

impl CmnModel {
    /// Write config, vocabulary and all weights to one file.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(std::fs::File::create(path.as_ref())?);
        out.write_all(MAGIC)?;
        let header = Header {
            config: self.config.clone(),
            vocab: self.vocab.tokens().to_vec(),
            params: self
                .store
                .iter()
                .map(|(name, value)| ParamMeta {
                    name: name.to_string(),
                    rows: value.nrows(),
                    cols: value.ncols(),
                })
                .collect(),
        };
        let header_json = serde_json::to_vec(&header)?;
        out.write_all(&(header_json.len() as u64).to_le_bytes())?;
        out.write_all(&header_json)?;
        for (_, value) in self.store.iter() {
            for &x in value.iter() {
                out.write_all(&x.to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Load a model saved by [`CmnModel::save`], verifying the format tag
    /// and that the weight layout matches the embedded config.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut input = BufReader::new(std::fs::File::open(path.as_ref())?);
        let mut magic = vec![0u8; MAGIC.len()];
        input
            .read_exact(&mut magic)
            .map_err(|_| CmnError::CheckpointFormat("file too short for format tag".into()))?;
        if magic != MAGIC {
            return Err(CmnError::CheckpointFormat(format!(
                "bad format tag {:?}",
                String::from_utf8_lossy(&magic)
            )));
        }
        let mut len_bytes = [0u8; 8];
        input
            .read_exact(&mut len_bytes)
            .map_err(|_| CmnError::CheckpointFormat("missing header length".into()))?;
        let header_len = u64::from_le_bytes(len_bytes);
        if header_len > MAX_HEADER_BYTES {
            return Err(CmnError::CheckpointFormat(format!(
                "header length {header_len} exceeds limit"
            )));
        }
        let mut header_json = vec![0u8; header_len as usize];
        input
            .read_exact(&mut header_json)
            .map_err(|_| CmnError::CheckpointFormat("truncated header".into()))?;
        let header: Header = serde_json::from_slice(&header_json)
            .map_err(|e| CmnError::CheckpointFormat(format!("header not parseable: {e}")))?;

        header.config.validate()?;
        let vocab = Vocab::from_tokens(header.vocab);
        if vocab.len() != header.config.vocab_size {
            return Err(CmnError::CheckpointFormat(format!(
                "vocab has {} entries but config says {}",
                vocab.len(),
                header.config.vocab_size
            )));
        }

        let mut store = net::init_params(&header.config);
        if header.params.len() != store.len() {
            return Err(CmnError::CheckpointFormat(format!(
                "checkpoint stores {} parameters, architecture expects {}",
                header.params.len(),
                store.len()
            )));
        }
        for meta in &header.params {
            let id = store.id(&meta.name).ok_or_else(|| {
                CmnError::CheckpointFormat(format!("unexpected parameter `{}`", meta.name))
            })?;
            let expected = store.value(id).dim();
            if expected != (meta.rows, meta.cols) {
                return Err(CmnError::CheckpointFormat(format!(
                    "parameter `{}` is {}x{}, architecture expects {}x{}",
                    meta.name, meta.rows, meta.cols, expected.0, expected.1
                )));
            }
            let mut buf = vec![0u8; meta.rows * meta.cols * 8];
            input.read_exact(&mut buf).map_err(|_| {
                CmnError::CheckpointFormat(format!("truncated data for `{}`", meta.name))
            })?;
            let value = store.value_mut(id);
            for (slot, chunk) in value.iter_mut().zip(buf.chunks_exact(8)) {
                *slot = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
            }
        }
        let mut trailing = [0u8; 1];
        if input.read(&mut trailing)? != 0 {
            return Err(CmnError::CheckpointFormat("trailing bytes after weights".into()));
        }
        Ok(CmnModel {
            config: header.config,
            vocab,
            store,
        })
    }
}
