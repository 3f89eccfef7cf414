//! Stand-in for a pretrained classifier: short BCE pretraining on labelled
//! images, plus a bias shift that makes the model miss a chosen fraction of
//! positives.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{ImageRecord, PreprocessConfig};
use crate::model::{build_classifier, sigmoid, BackboneConfig, ClassifierHead, ClassifierModel, ConvBackbone, Parameters};
use crate::pathology::PathologyId;
use crate::trainer::{Adam, AdamConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub backbone: BackboneConfig,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig { backbone: BackboneConfig::default(), epochs: 6, learning_rate: 2e-3, batch_size: 16, seed: 0 }
    }
}

/// Binary cross-entropy over all pathology outputs, Adam, no weight decay.
/// Returns the model and the mean loss of each epoch.
pub fn pretrain_classifier(
    records: &[ImageRecord],
    preprocess: PreprocessConfig,
    cfg: &PretrainConfig,
) -> Result<(ClassifierModel, Vec<f64>)> {
    if records.is_empty() {
        return Err(Error::Empty("no records to pretrain on".into()));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::Config("epochs and batch_size must be at least 1".into()));
    }
    let backbone = ConvBackbone::new(cfg.backbone.clone(), cfg.seed)?;
    let head = ClassifierHead::new(backbone.feature_dim(), cfg.seed.wrapping_add(1));
    let mut model = build_classifier(backbone, head, preprocess)?;
    let mut adam = Adam::new(AdamConfig::new(cfg.learning_rate, 0.0));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..records.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut bg = model.backbone.zeros_like();
            let mut hg = model.head.zeros_like();
            for &i in batch {
                let r = &records[i];
                let (feats, tr) = model.backbone.features_traced(&r.pixels)?;
                let logits = model.head.logits(&feats);
                let mut grad = Vec::with_capacity(logits.len());
                for (k, &z) in logits.iter().enumerate() {
                    let y = if r.labels[k].is_positive() { 1.0 } else { 0.0 };
                    let z = z as f64;
                    // log(1 + e^z) − y·z, stable for large |z|
                    total += z.max(0.0) - y * z + (-z.abs()).exp().ln_1p();
                    grad.push((sigmoid(z) - y) as f32);
                }
                let gf = model.head.linear.backward(&feats, &grad, &mut hg.linear);
                model.backbone.backward(&tr, &gf, &mut bg);
            }
            let s = 1.0 / batch.len() as f32;
            bg.scale(s);
            hg.scale(s);
            let params = model.backbone.tensors_mut().into_iter().chain(model.head.tensors_mut()).collect();
            let grads = bg.tensors().into_iter().chain(hg.tensors()).collect();
            adam.step(params, grads);
        }
        let mean = total / records.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Diverged("non-finite loss during pretraining".into()));
        }
        trace.push(mean);
    }
    Ok((model, trace))
}

/// Shift the output bias of `pathology` so that `miss_rate` of the positive
/// records in `records` fall below the 0.5 threshold.
pub fn weaken_classifier(
    model: &mut ClassifierModel,
    records: &[ImageRecord],
    pathology: PathologyId,
    miss_rate: f64,
) -> Result<()> {
    if !(0.0..=1.0).contains(&miss_rate) {
        return Err(Error::InvalidArgument(format!("miss_rate {miss_rate} must lie in [0, 1]")));
    }
    let k = pathology.index();
    let mut logits = Vec::new();
    for r in records.iter().filter(|r| r.truth(pathology)) {
        let feats = model.backbone.features(&r.pixels)?;
        logits.push(model.head.logits(&feats)[k]);
    }
    if logits.is_empty() {
        return Err(Error::Empty(format!("no positive records for {pathology}")));
    }
    logits.sort_by(f32::total_cmp);
    let cut = ((miss_rate * logits.len() as f64).round() as usize).min(logits.len() - 1);
    // The record at `cut` lands exactly on logit 0 (probability 0.5, positive).
    model.head.linear.bias[k] -= logits[cut];
    Ok(())
}

/// Pretrain, then weaken every pathology that has positives in `records`.
pub fn weakened_baseline(
    records: &[ImageRecord],
    preprocess: PreprocessConfig,
    cfg: &PretrainConfig,
    miss_rate: f64,
) -> Result<(ClassifierModel, Vec<f64>)> {
    let (mut model, trace) = pretrain_classifier(records, preprocess, cfg)?;
    for p in PathologyId::all() {
        if records.iter().any(|r| r.truth(p)) {
            weaken_classifier(&mut model, records, p, miss_rate)?;
        }
    }
    Ok((model, trace))
}
