//! Checkpoint file: a JSON header with the parameters as a base64 blob of
//! little-endian `f64`s.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Arch, Classifier};
use crate::error::{Error, Result};
use crate::numcore::{Layout, ParameterVector};

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    arch: Arch,
    input_dim: usize,
    num_classes: usize,
    layout: Layout,
    layout_hash: String,
    payload: String,
    #[serde(default)]
    lineage: Value,
}

const FORMAT: &str = "dememlab-checkpoint-v1";

pub fn encode_f64s(values: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    STANDARD.encode(bytes)
}

pub fn decode_f64s(payload: &str) -> Result<Vec<f64>> {
    let bytes = STANDARD
        .decode(payload)
        .map_err(|e| Error::Format(format!("bad base64 payload: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Format("payload length is not a multiple of 8".into()));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

impl Classifier {
    pub fn to_checkpoint_json(&self, lineage: Value) -> Result<String> {
        let file = CheckpointFile {
            format: FORMAT.into(),
            arch: self.arch,
            input_dim: self.input_dim,
            num_classes: self.num_classes,
            layout: self.params.layout().clone(),
            layout_hash: self.params.layout().digest(),
            payload: encode_f64s(self.params.values()),
            lineage,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    /// Parses a checkpoint and returns the model and its lineage block.
    pub fn from_checkpoint_json(text: &str) -> Result<(Self, Value)> {
        let file: CheckpointFile =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
        if file.format != FORMAT {
            return Err(Error::Format(format!("unknown checkpoint format `{}`", file.format)));
        }
        let expected = file.arch.layout(file.input_dim, file.num_classes);
        if expected != file.layout || expected.digest() != file.layout_hash {
            return Err(Error::Format("checkpoint layout does not match its architecture".into()));
        }
        let values = decode_f64s(&file.payload)?;
        if values.len() != expected.total_len() {
            return Err(Error::Format(format!(
                "payload holds {} values, layout needs {}",
                values.len(),
                expected.total_len()
            )));
        }
        let params = ParameterVector::new(values, expected)?;
        Ok((
            Self {
                arch: file.arch,
                input_dim: file.input_dim,
                num_classes: file.num_classes,
                params,
            },
            file.lineage,
        ))
    }

    pub fn save(&self, path: &Path, lineage: Value) -> Result<()> {
        let text = self.to_checkpoint_json(lineage)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, Value)> {
        let mut s = String::new();
        std::io::Read::read_to_string(&mut BufReader::new(File::open(path)?), &mut s)?;
        Self::from_checkpoint_json(&s)
    }
}

/// Writes any serializable artifact as pretty JSON.
pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    serde_json::to_writer_pretty(BufWriter::new(File::create(path)?), value)?;
    Ok(())
}
