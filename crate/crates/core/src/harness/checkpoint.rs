//! JSON checkpoints with base64 little-endian `f32` payloads.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{ParamStore, Tensor};
use crate::error::{Error, Result};

pub const FORMAT_TAG: &str = "imma-ckpt-v1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("unexpected format tag `{0}` (want `{FORMAT_TAG}`)")]
    WrongFormat(String),
    #[error("parameter `{name}`: unsupported dtype `{dtype}`")]
    Dtype { name: String, dtype: String },
    #[error("parameter `{name}`: invalid base64 payload ({reason})")]
    Base64 { name: String, reason: String },
    #[error("parameter `{name}`: payload holds {got} bytes, shape needs {expected}")]
    Length {
        name: String,
        expected: usize,
        got: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Pretrained,
    Erased,
    Immunized,
    Adapter,
    Classifier,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metadata {
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub command: String,
    /// Role-specific attributes (adapter token, overlap names, ...).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, String>,
}

impl Metadata {
    pub fn new(role: Role) -> Self {
        Self {
            role,
            method: None,
            target: None,
            seed: 0,
            command: String::new(),
            extra: BTreeMap::new(),
        }
    }

    pub fn with_method(mut self, m: impl Into<String>) -> Self {
        self.method = Some(m.into());
        self
    }

    pub fn with_target(mut self, t: impl Into<String>) -> Self {
        self.target = Some(t.into());
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_command(mut self, c: impl Into<String>) -> Self {
        self.command = c.into();
        self
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EncodedTensor {
    shape: Vec<usize>,
    dtype: String,
    data: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    format: String,
    metadata: Metadata,
    params: BTreeMap<String, EncodedTensor>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    metadata: Metadata,
    #[allow(dead_code)]
    params: serde::de::IgnoredAny,
}

pub fn encode_checkpoint(store: &ParamStore, metadata: &Metadata) -> Result<String> {
    let params = store
        .iter()
        .map(|(name, t)| {
            let enc = EncodedTensor {
                shape: t.shape().to_vec(),
                dtype: "f32le".into(),
                data: STANDARD.encode(t.to_le_bytes()),
            };
            (name.to_string(), enc)
        })
        .collect();
    let doc = Document {
        format: FORMAT_TAG.into(),
        metadata: metadata.clone(),
        params,
    };
    Ok(serde_json::to_string_pretty(&doc)?)
}

pub fn decode_checkpoint(text: &str) -> Result<(ParamStore, Metadata)> {
    let doc: Document = serde_json::from_str(text)?;
    if doc.format != FORMAT_TAG {
        return Err(CheckpointError::WrongFormat(doc.format).into());
    }
    let mut store = ParamStore::new();
    for (name, enc) in doc.params {
        if enc.dtype != "f32le" {
            return Err(CheckpointError::Dtype { name, dtype: enc.dtype }.into());
        }
        let bytes = STANDARD
            .decode(enc.data.as_bytes())
            .map_err(|e| CheckpointError::Base64 {
                name: name.clone(),
                reason: e.to_string(),
            })?;
        let expected = enc.shape.iter().product::<usize>() * 4;
        if bytes.len() != expected {
            return Err(CheckpointError::Length {
                name,
                expected,
                got: bytes.len(),
            }
            .into());
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        store.insert(name, Tensor::new(enc.shape, data)?);
    }
    Ok((store, doc.metadata))
}

pub fn save_checkpoint(store: &ParamStore, metadata: &Metadata, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, encode_checkpoint(store, metadata)?).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(ParamStore, Metadata)> {
    decode_checkpoint(&read(path)?)
}

/// Reads only the format tag and metadata; payloads are skipped undecoded.
pub fn inspect_checkpoint(path: &Path) -> Result<Metadata> {
    let header: Header = serde_json::from_str(&read(path)?)?;
    if header.format != FORMAT_TAG {
        return Err(CheckpointError::WrongFormat(header.format).into());
    }
    Ok(header.metadata)
}
