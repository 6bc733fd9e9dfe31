//! `vgmd1` model files: the magic, a little-endian `u32` header length, a
//! JSON header (`config`, `param_count`, `width`), then little-endian `f64`
//! values: all trainable parameters, followed by each layer's running mean
//! and running variance.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GnnConfig, Model, RunningStats};
use crate::error::{Error, Result};
use crate::io;

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"vgmd1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: GnnConfig,
    param_count: usize,
    width: usize,
}

impl Model {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&Header {
            config: self.config.clone(),
            param_count: self.param_count(),
            width: self.config.width(),
        })
        .expect("header serializes");
        let mut out = CHECKPOINT_MAGIC.to_vec();
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        let stats = self.running.iter().flat_map(|r| r.mean.iter().chain(&r.var));
        for v in self.params.iter().chain(stats) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 9 || &bytes[..5] != CHECKPOINT_MAGIC {
            return Err(Error::MalformedHeader("checkpoint lacks the vgmd1 magic".into()));
        }
        let hlen = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
        let body_start = 9 + hlen;
        if bytes.len() < body_start {
            return Err(Error::Truncated { expected: body_start, found: bytes.len() });
        }
        let header: Header = serde_json::from_slice(&bytes[9..body_start])
            .map_err(|e| Error::Schema(format!("checkpoint header: {e}")))?;
        let width = header.config.width();
        let layers = header.config.layers;
        let expected = body_start + 8 * (header.param_count + 2 * layers * width);
        if bytes.len() != expected {
            return Err(Error::Truncated { expected, found: bytes.len() });
        }
        let mut values = bytes[body_start..]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")));
        let params: Vec<f64> = values.by_ref().take(header.param_count).collect();
        let running = (0..layers)
            .map(|_| RunningStats {
                mean: values.by_ref().take(width).collect(),
                var: values.by_ref().take(width).collect(),
            })
            .collect();
        Model::from_parts(header.config, params, running)
    }
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    io::write_atomic(path, &model.to_bytes())
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    Model::from_bytes(&io::read(path)?)
}
