//! Backbone + head models: the multi-label classifier used for baseline
//! inference, and the embedding model obtained by swapping its output layer.

mod backbone;
mod checkpoint;
mod heads;
pub mod layers;

pub use backbone::{BackboneConfig, BackboneTrace, ConvBackbone};
pub use checkpoint::{
    checkpoint_id, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint,
    CheckpointMeta, HeadKind, Model, CHECKPOINT_VERSION,
};
pub use heads::{prelu, sigmoid, ClassifierHead, EmbeddingHead, EMBEDDING_DIM, PRELU_INIT};
pub use layers::Parameters;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{PixelTensor, PreprocessConfig};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierModel {
    pub backbone: ConvBackbone,
    pub head: ClassifierHead,
    pub preprocess: PreprocessConfig,
}

pub fn build_classifier(
    backbone: ConvBackbone,
    head: ClassifierHead,
    preprocess: PreprocessConfig,
) -> Result<ClassifierModel> {
    if head.input_dim() != backbone.feature_dim() {
        return Err(Error::DimensionMismatch(format!(
            "classifier head expects {} features, backbone produces {}",
            head.input_dim(),
            backbone.feature_dim()
        )));
    }
    preprocess.validate()?;
    Ok(ClassifierModel { backbone, head, preprocess })
}

impl ClassifierModel {
    pub fn probabilities(&self, pixels: &PixelTensor) -> Result<Vec<f64>> {
        Ok(self.head.probabilities(&self.backbone.features(pixels)?))
    }
}

/// Per-pathology probabilities and thresholded decisions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub probabilities: Vec<f64>,
    pub decisions: Vec<bool>,
}

/// `decision = probability >= threshold`; ties go to positive.
pub fn classify_image(model: &ClassifierModel, pixels: &PixelTensor, threshold: f64) -> Result<Classification> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidArgument(format!("threshold {threshold} must lie in (0, 1)")));
    }
    let probabilities = model.probabilities(pixels)?;
    let decisions = probabilities.iter().map(|&p| p >= threshold).collect();
    Ok(Classification { probabilities, decisions })
}

/// Backbone with the embedding head. The original classification head rides
/// along unchanged so baseline decisions can still be recomputed.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingModel {
    pub backbone: ConvBackbone,
    pub head: EmbeddingHead,
    pub classifier: ClassifierHead,
    pub preprocess: PreprocessConfig,
    pub head_seed: u64,
}

/// Replace the sigmoid classification layer with a fresh 128-d linear + PReLU
/// head. The backbone is copied verbatim.
pub fn swap_embedding_head(model: &ClassifierModel, seed: u64) -> EmbeddingModel {
    EmbeddingModel {
        backbone: model.backbone.clone(),
        head: EmbeddingHead::new(model.backbone.feature_dim(), seed),
        classifier: model.head.clone(),
        preprocess: model.preprocess,
        head_seed: seed,
    }
}

pub fn embed_image(model: &EmbeddingModel, pixels: &PixelTensor) -> Result<Vec<f32>> {
    let features = model.backbone.features(pixels)?;
    let out = model.head.forward(&features);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("embedding output".into()));
    }
    Ok(out)
}

impl EmbeddingModel {
    /// The retained classifier, rebuilt as a standalone model.
    pub fn baseline_classifier(&self) -> ClassifierModel {
        ClassifierModel { backbone: self.backbone.clone(), head: self.classifier.clone(), preprocess: self.preprocess }
    }
}
