//! Binary checkpoint format:
//!
//! ```text
//! magic "FSLCKPT\0" | u32 version | u64 meta_len | meta JSON
//! | u64 tensor_count | (u64 len | len × f32)* | sha256 of everything before
//! ```
//!
//! All integers and floats are little-endian.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BackboneConfig, ClassifierHead, ClassifierModel, ConvBackbone, EmbeddingHead, EmbeddingModel, Parameters};
use crate::error::{Error, Result};
use crate::ingest::PreprocessConfig;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"FSLCKPT\0";
const DIGEST_LEN: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Classifier,
    Embedding,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Classifier(ClassifierModel),
    Embedding(EmbeddingModel),
}

impl Model {
    fn head_kind(&self) -> HeadKind {
        match self {
            Model::Classifier(_) => HeadKind::Classifier,
            Model::Embedding(_) => HeadKind::Embedding,
        }
    }

    fn backbone(&self) -> &ConvBackbone {
        match self {
            Model::Classifier(m) => &m.backbone,
            Model::Embedding(m) => &m.backbone,
        }
    }

    fn preprocess(&self) -> PreprocessConfig {
        match self {
            Model::Classifier(m) => m.preprocess,
            Model::Embedding(m) => m.preprocess,
        }
    }

    fn tensors(&self) -> Vec<&[f32]> {
        match self {
            Model::Classifier(m) => m.backbone.tensors().into_iter().chain(m.head.tensors()).collect(),
            Model::Embedding(m) => m
                .backbone
                .tensors()
                .into_iter()
                .chain(m.classifier.tensors())
                .chain(m.head.tensors())
                .collect(),
        }
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f32]> {
        match self {
            Model::Classifier(m) => m.backbone.tensors_mut().into_iter().chain(m.head.tensors_mut()).collect(),
            Model::Embedding(m) => m
                .backbone
                .tensors_mut()
                .into_iter()
                .chain(m.classifier.tensors_mut())
                .chain(m.head.tensors_mut())
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub head_kind: HeadKind,
    pub backbone: BackboneConfig,
    pub feature_dim: usize,
    pub preprocess: PreprocessConfig,
    /// Seed that initialized whatever was trained last (backbone or head).
    pub seed: u64,
    #[serde(default)]
    pub head_seed: Option<u64>,
    #[serde(default)]
    pub training_fingerprint: Option<String>,
    /// Free-form training record (config, optimizer settings, loss trace).
    #[serde(default)]
    pub training: Option<serde_json::Value>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub model: Model,
}

impl Checkpoint {
    pub fn new(model: Model, seed: u64) -> Self {
        let backbone = model.backbone();
        let meta = CheckpointMeta {
            format_version: CHECKPOINT_VERSION,
            head_kind: model.head_kind(),
            backbone: backbone.config().clone(),
            feature_dim: backbone.feature_dim(),
            preprocess: model.preprocess(),
            seed,
            head_seed: match &model {
                Model::Embedding(m) => Some(m.head_seed),
                Model::Classifier(_) => None,
            },
            training_fingerprint: None,
            training: None,
        };
        Checkpoint { meta, model }
    }

    pub fn with_training(mut self, fingerprint: String, record: serde_json::Value) -> Self {
        self.meta.training_fingerprint = Some(fingerprint);
        self.meta.training = Some(record);
        self
    }

    pub fn into_classifier(self) -> Result<ClassifierModel> {
        match self.model {
            Model::Classifier(m) => Ok(m),
            Model::Embedding(_) => Err(Error::InvalidArgument("checkpoint holds an embedding model".into())),
        }
    }

    pub fn into_embedding(self) -> Result<EmbeddingModel> {
        match self.model {
            Model::Embedding(m) => Ok(m),
            Model::Classifier(_) => Err(Error::InvalidArgument("checkpoint holds a classifier model".into())),
        }
    }
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let meta = serde_json::to_vec(&ckpt.meta)?;
    let tensors = ckpt.model.tensors();
    let mut out = Vec::with_capacity(64 + meta.len() + 4 * tensors.iter().map(|t| t.len() + 2).sum::<usize>());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&ckpt.meta.format_version.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    out.extend_from_slice(&meta);
    out.extend_from_slice(&(tensors.len() as u64).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.len() as u64).to_le_bytes());
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::CorruptCheckpoint("unexpected end of data".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::CorruptCheckpoint("length overflow".into()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion { found: version, expected: CHECKPOINT_VERSION });
    }
    if bytes.len() < DIGEST_LEN {
        return Err(Error::CorruptCheckpoint("unexpected end of data".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::CorruptCheckpoint("checksum mismatch (truncated or modified)".into()));
    }

    let meta_len = r.len()?;
    let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len)?)
        .map_err(|e| Error::CorruptCheckpoint(format!("metadata: {e}")))?;

    let backbone = ConvBackbone::new(meta.backbone.clone(), 0)?;
    if backbone.feature_dim() != meta.feature_dim {
        return Err(Error::CorruptCheckpoint("feature_dim disagrees with backbone config".into()));
    }
    let mut model = match meta.head_kind {
        HeadKind::Classifier => Model::Classifier(ClassifierModel {
            head: ClassifierHead::zeros(meta.feature_dim),
            backbone,
            preprocess: meta.preprocess,
        }),
        HeadKind::Embedding => Model::Embedding(EmbeddingModel {
            head: EmbeddingHead::zeros(meta.feature_dim),
            classifier: ClassifierHead::zeros(meta.feature_dim),
            backbone,
            preprocess: meta.preprocess,
            head_seed: meta.head_seed.unwrap_or(0),
        }),
    };

    let count = r.len()?;
    let mut slots = model.tensors_mut();
    if count != slots.len() {
        return Err(Error::CorruptCheckpoint(format!("expected {} tensors, found {count}", slots.len())));
    }
    for slot in slots.iter_mut() {
        let n = r.len()?;
        if n != slot.len() {
            return Err(Error::CorruptCheckpoint(format!("tensor length {n}, expected {}", slot.len())));
        }
        let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::CorruptCheckpoint("length overflow".into()))?)?;
        for (dst, chunk) in slot.iter_mut().zip(raw.chunks_exact(4)) {
            *dst = f32::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    if r.pos != body.len() {
        return Err(Error::CorruptCheckpoint("trailing bytes".into()));
    }
    drop(slots);
    Ok(Checkpoint { meta, model })
}

/// Content hash of the encoded checkpoint (first 16 hex digits of SHA-256).
pub fn checkpoint_id(ckpt: &Checkpoint) -> Result<String> {
    let bytes = encode_checkpoint(ckpt)?;
    Ok(hex::encode(Sha256::digest(&bytes))[..16].to_string())
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let bytes = encode_checkpoint(ckpt)?;
    Error::create_parent(path)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
