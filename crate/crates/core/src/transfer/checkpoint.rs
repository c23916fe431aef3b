//! Binary checkpoint format.
//!
//! ```text
//! offset  size  content
//! 0       8     magic "DRIDCKPT"
//! 8       4     format version, u32 little-endian
//! 12      4     manifest length L in bytes, u32 little-endian
//! 16      L     UTF-8 JSON manifest (configs, provenance, tensor table)
//! 16+L    ...   payload: f64 little-endian values
//! ```
//!
//! Each tensor-table entry gives a name, a shape, a byte offset into the
//! payload and an element count. Tensors are stored contiguously in table
//! order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingConfig, FrameEmbedding};
use crate::error::{Error, Result};
use crate::numeric::{HasParameters, Parameter, RngStream, Tensor};
use crate::sequence::SequenceModel;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DRIDCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceSpec {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub classes: usize,
    pub dropout: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: f64,
    pub scale: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub len: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Manifest {
    config_hash: String,
    embedding: EmbeddingConfig,
    head_classes: Option<usize>,
    sequence: Option<SequenceSpec>,
    standardization: Standardization,
    provenance: String,
    tensors: Vec<TensorEntry>,
}

/// Named parameter tensors plus the configuration needed to rebuild the
/// model they came from.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub embedding: EmbeddingConfig,
    pub head_classes: Option<usize>,
    pub sequence: Option<SequenceSpec>,
    pub provenance: String,
    pub tensors: Vec<(String, Tensor)>,
}

fn ckpt_err(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    /// Snapshot an embedding (with its head, if any) and optionally a
    /// sequence model.
    pub fn capture(emb: &FrameEmbedding, seq: Option<&SequenceModel>, provenance: impl Into<String>) -> Self {
        let mut tensors: Vec<(String, Tensor)> = emb
            .parameters()
            .into_iter()
            .map(|p| (p.name().to_string(), p.value().clone()))
            .collect();
        if let Some(s) = seq {
            tensors.extend(s.parameters().into_iter().map(|p| (p.name().to_string(), p.value().clone())));
        }
        Checkpoint {
            embedding: emb.config().clone(),
            head_classes: emb.head().map(|h| h.classes()),
            sequence: seq.map(|s| SequenceSpec {
                input_dim: s.lstm.input_dim(),
                hidden_dim: s.lstm.hidden_dim(),
                classes: s.classes(),
                dropout: s.classifier.dropout_rate(),
            }),
            provenance: provenance.into(),
            tensors,
        }
    }

    /// Fingerprint of the embedding architecture.
    pub fn config_hash(&self) -> String {
        self.embedding.fingerprint()
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut offset = 0u64;
        for (name, t) in &self.tensors {
            if entries.iter().any(|e: &TensorEntry| &e.name == name) {
                return Err(ckpt_err(format!("duplicate tensor `{name}`")));
            }
            entries.push(TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
                len: t.len() as u64,
            });
            offset += 8 * t.len() as u64;
        }
        let manifest = Manifest {
            config_hash: self.config_hash(),
            embedding: self.embedding.clone(),
            head_classes: self.head_classes,
            sequence: self.sequence,
            standardization: Standardization {
                mean: self.embedding.input_mean,
                scale: self.embedding.input_scale,
            },
            provenance: self.provenance.clone(),
            tensors: entries,
        };
        let json = serde_json::to_vec(&manifest)?;
        let manifest_len = u32::try_from(json.len()).map_err(|_| ckpt_err("manifest too large"))?;
        let mut out = Vec::with_capacity(HEADER_LEN + json.len() + offset as usize);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&manifest_len.to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(ckpt_err("not a checkpoint (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(ckpt_err(format!("unsupported format version {version}")));
        }
        let manifest_len = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
        let payload_start = HEADER_LEN
            .checked_add(manifest_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| ckpt_err("truncated manifest"))?;
        let manifest: Manifest = serde_json::from_slice(&bytes[HEADER_LEN..payload_start])
            .map_err(|e| ckpt_err(format!("malformed manifest: {e}")))?;
        if manifest.config_hash != manifest.embedding.fingerprint() {
            return Err(ckpt_err("config hash does not match the stored embedding config"));
        }
        let payload = &bytes[payload_start..];
        let mut expected = 0u64;
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for e in &manifest.tensors {
            let numel: usize = e.shape.iter().product();
            if numel as u64 != e.len || e.offset != expected {
                return Err(ckpt_err(format!("tensor `{}` has an inconsistent table entry", e.name)));
            }
            if tensors.iter().any(|(n, _): &(String, Tensor)| n == &e.name) {
                return Err(ckpt_err(format!("duplicate tensor `{}`", e.name)));
            }
            let start = e.offset as usize;
            let end = start + 8 * numel;
            let raw = payload
                .get(start..end)
                .ok_or_else(|| ckpt_err(format!("tensor `{}` is truncated", e.name)))?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push((e.name.clone(), Tensor::new(e.shape.clone(), data)?));
            expected = end as u64;
        }
        if expected as usize != payload.len() {
            return Err(ckpt_err(format!(
                "{} trailing payload bytes",
                payload.len() - expected as usize
            )));
        }
        Ok(Checkpoint {
            embedding: manifest.embedding,
            head_classes: manifest.head_classes,
            sequence: manifest.sequence,
            provenance: manifest.provenance,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Rebuild the stored models exactly.
    pub fn restore(&self) -> Result<(FrameEmbedding, Option<SequenceModel>)> {
        let mut rng = RngStream::new(0);
        let mut emb = FrameEmbedding::build(&self.embedding, &mut rng)?;
        if let Some(n) = self.head_classes {
            emb.adapt_head(n, &mut rng)?;
        }
        let mut seq = match self.sequence {
            Some(s) => Some(SequenceModel::with_dims(s.input_dim, s.hidden_dim, s.classes, s.dropout, &mut rng)?),
            None => None,
        };
        self.load_into(&mut emb, seq.as_mut())?;
        Ok((emb, seq))
    }

    /// Overwrite every parameter of the given models with the stored values.
    /// The architecture hash must match and the tensor sets must coincide
    /// exactly; the first mismatching tensor is named in the error.
    pub fn load_into(&self, emb: &mut FrameEmbedding, seq: Option<&mut SequenceModel>) -> Result<()> {
        if emb.config().fingerprint() != self.config_hash() {
            return Err(ckpt_err(format!(
                "embedding config hash {} differs from checkpoint {}",
                emb.config().fingerprint(),
                self.config_hash()
            )));
        }
        let mut params: Vec<&mut Parameter> = emb.parameters_mut();
        if let Some(s) = seq {
            params.extend(s.parameters_mut());
        }
        for p in &params {
            let stored = self
                .tensor(p.name())
                .ok_or_else(|| ckpt_err(format!("tensor `{}` missing from checkpoint", p.name())))?;
            if stored.shape() != p.shape() {
                return Err(ckpt_err(format!(
                    "tensor `{}` has shape {:?} in checkpoint but {:?} in model",
                    p.name(),
                    stored.shape(),
                    p.shape()
                )));
            }
        }
        if let Some((name, _)) = self.tensors.iter().find(|(n, _)| !params.iter().any(|p| p.name() == n)) {
            return Err(ckpt_err(format!("checkpoint tensor `{name}` has no counterpart in the model")));
        }
        for p in params {
            let stored = self.tensor(p.name()).expect("checked above").clone();
            *p.value_mut() = stored;
            p.reset_momentum();
            p.zero_grad();
        }
        Ok(())
    }
}
