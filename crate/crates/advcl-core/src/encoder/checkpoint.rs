//! Encoder checkpoints: JSON files carrying config, tokenizer identity, and
//! every parameter tensor in the canonical ordering.

use super::{EncoderBundle, EncoderConfig};
use crate::corpus::SubwordModel;
use crate::error::{Error, Result};
use crate::nn::Params;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    config: EncoderConfig,
    subword_id: String,
    params: Vec<Array2<f64>>,
}

/// Hex digest over all parameter tensors, for byte-level comparisons of
/// training runs. Uses the exact little-endian bit patterns, so two
/// checksums are equal iff every parameter bit is.
pub fn param_checksum(model: &impl Params) -> String {
    let mut hasher = Sha256::new();
    for p in model.params() {
        hasher.update((p.nrows() as u64).to_le_bytes());
        hasher.update((p.ncols() as u64).to_le_bytes());
        for v in p.iter() {
            hasher.update(v.to_bits().to_le_bytes());
        }
    }
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl EncoderBundle {
    /// Overwrite every parameter tensor from `tensors`, which must follow
    /// the canonical ordering and match each shape exactly.
    pub fn set_params(&mut self, tensors: &[Array2<f64>]) -> Result<()> {
        let mut targets = self.params_mut();
        if targets.len() != tensors.len() {
            return Err(Error::Checkpoint(format!(
                "given {} tensors, model expects {}",
                tensors.len(),
                targets.len()
            )));
        }
        for (i, (t, s)) in targets.iter_mut().zip(tensors).enumerate() {
            if t.shape() != s.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {i} shape {:?} does not match model {:?}",
                    s.shape(),
                    t.shape()
                )));
            }
            t.assign(s);
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = CheckpointFile {
            format: "advcl-encoder".into(),
            version: 1,
            config: self.cfg.clone(),
            subword_id: self.subword_id.clone(),
            params: self.params().iter().map(|p| (*p).clone()).collect(),
        };
        let json = serde_json::to_string(&file)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    /// Load a checkpoint and verify it matches `subword`'s identity hash.
    pub fn load(path: &Path, subword: &SubwordModel) -> Result<EncoderBundle> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let file: CheckpointFile = serde_json::from_slice(&bytes)?;
        if file.format != "advcl-encoder" || file.version != 1 {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint format {}/{}",
                file.format, file.version
            )));
        }
        let expected = subword.id();
        if file.subword_id != expected {
            return Err(Error::Checkpoint(format!(
                "checkpoint was built against subword model {}, given {}",
                &file.subword_id[..12.min(file.subword_id.len())],
                &expected[..12]
            )));
        }
        let mut bundle = EncoderBundle::new(file.config, file.subword_id, 0)?;
        bundle.set_params(&file.params)?;
        Ok(bundle)
    }
}
