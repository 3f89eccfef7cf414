use std::collections::{BTreeSet, HashMap};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::adam::{Adam, AdamConfig};
use super::loss::{triplet_objective, LossKind};
use crate::error::{Error, Result};
use crate::ingest::{ImageStore, PixelTensor};
use crate::model::{checkpoint_id, BackboneTrace, Checkpoint, EmbeddingModel, Model, Parameters};
use crate::pathology::PathologyId;
use crate::triplets::ImageTriplet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    /// One pathology's triplets at a time.
    Tfsl,
    /// Triplets from every pathology pooled into one run.
    Incremental,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub margin: f64,
    pub loss_kind: LossKind,
    pub batch_size: usize,
    pub seed: u64,
    pub backbone_trainable: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5,
            learning_rate: 1e-4,
            weight_decay: 1e-5,
            margin: 1.0,
            loss_kind: LossKind::MarginRanking,
            batch_size: 16,
            seed: 0,
            backbone_trainable: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning_rate must be finite and non-negative".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        if !(self.margin >= 0.0) {
            return Err(Error::Config("margin must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }

    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))[..16].to_string()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig::new(self.learning_rate, self.weight_decay)
    }
}

#[derive(Clone, Debug)]
pub struct TrainedEmbeddingModel {
    pub model: EmbeddingModel,
    pub config: TrainConfig,
    pub mode: TrainMode,
    pub pathologies: Vec<PathologyId>,
    /// Mean training loss per epoch.
    pub loss_trace: Vec<f64>,
    pub n_triplets: usize,
    pub wall_clock_secs: f64,
}

/// Serialized alongside checkpoints and returned by the job API.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub mode: TrainMode,
    pub pathologies: Vec<PathologyId>,
    pub config: TrainConfig,
    pub adam: AdamConfig,
    pub loss_trace: Vec<f64>,
    pub n_triplets: usize,
    pub checkpoint_id: String,
    pub wall_clock_secs: f64,
}

impl TrainedEmbeddingModel {
    pub fn checkpoint(&self) -> Checkpoint {
        let record = serde_json::json!({
            "mode": self.mode,
            "pathologies": self.pathologies,
            "config": self.config,
            "adam": self.config.adam(),
            "loss_trace": self.loss_trace,
            "n_triplets": self.n_triplets,
        });
        Checkpoint::new(Model::Embedding(self.model.clone()), self.config.seed)
            .with_training(self.config.fingerprint(), record)
    }

    pub fn checkpoint_id(&self) -> Result<String> {
        checkpoint_id(&self.checkpoint())
    }

    pub fn record(&self) -> Result<TrainingRecord> {
        Ok(TrainingRecord {
            mode: self.mode,
            pathologies: self.pathologies.clone(),
            config: self.config.clone(),
            adam: self.config.adam(),
            loss_trace: self.loss_trace.clone(),
            n_triplets: self.n_triplets,
            checkpoint_id: self.checkpoint_id()?,
            wall_clock_secs: self.wall_clock_secs,
        })
    }
}

/// Retrain on one pathology's triplets.
pub fn train_tfsl(
    model: EmbeddingModel,
    triplets: &[ImageTriplet],
    images: &ImageStore,
    cfg: &TrainConfig,
) -> Result<TrainedEmbeddingModel> {
    let first = triplets.first().ok_or_else(|| Error::Empty("no training triplets".into()))?;
    if let Some(t) = triplets.iter().find(|t| t.pathology != first.pathology) {
        return Err(Error::InvalidArgument(format!(
            "per-pathology training got triplets for both {} and {}",
            first.pathology, t.pathology
        )));
    }
    train_loop(model, triplets, images, cfg, TrainMode::Tfsl)
}

/// Retrain once on triplets pooled across pathologies.
pub fn train_incremental(
    model: EmbeddingModel,
    triplets: &[ImageTriplet],
    images: &ImageStore,
    cfg: &TrainConfig,
) -> Result<TrainedEmbeddingModel> {
    if triplets.is_empty() {
        return Err(Error::Empty("no training triplets".into()));
    }
    train_loop(model, triplets, images, cfg, TrainMode::Incremental)
}

struct Forward {
    features: Vec<f32>,
    trace: Option<BackboneTrace>,
    pre: Vec<f32>,
    embedding: Vec<f64>,
}

fn train_loop(
    mut model: EmbeddingModel,
    triplets: &[ImageTriplet],
    images: &ImageStore,
    cfg: &TrainConfig,
    mode: TrainMode,
) -> Result<TrainedEmbeddingModel> {
    cfg.validate()?;
    let started = Instant::now();
    let resolved: Vec<[&PixelTensor; 3]> = triplets
        .iter()
        .map(|t| Ok([images.pixels(&t.anchor_id)?, images.pixels(&t.tp_id)?, images.pixels(&t.tn_id)?]))
        .collect::<Result<_>>()?;

    // With a frozen backbone the features never change; compute them once.
    let mut frozen: HashMap<&str, Vec<f32>> = HashMap::new();
    if !cfg.backbone_trainable {
        for (t, px) in triplets.iter().zip(&resolved) {
            for (id, p) in [&t.anchor_id, &t.tp_id, &t.tn_id].into_iter().zip(px) {
                if !frozen.contains_key(id.as_str()) {
                    frozen.insert(id, model.backbone.features(p)?);
                }
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.adam());
    let mut order: Vec<usize> = (0..triplets.len()).collect();
    let mut loss_trace = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch_no, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut head_grads = model.head.zeros_like();
            let mut bb_grads = cfg.backbone_trainable.then(|| model.backbone.zeros_like());

            for &i in batch {
                let t = &triplets[i];
                let ids = [&t.anchor_id, &t.tp_id, &t.tn_id];
                let mut fw = Vec::with_capacity(3);
                for (id, px) in ids.iter().zip(resolved[i]) {
                    let (features, trace) = if cfg.backbone_trainable {
                        let (f, tr) = model.backbone.features_traced(px)?;
                        (f, Some(tr))
                    } else {
                        (frozen[id.as_str()].clone(), None)
                    };
                    let (emb, pre) = model.head.forward_traced(&features);
                    let embedding = emb.into_iter().map(f64::from).collect();
                    fw.push(Forward { features, trace, pre, embedding });
                }
                let eval = triplet_objective(
                    cfg.loss_kind,
                    &fw[0].embedding,
                    &fw[1].embedding,
                    &fw[2].embedding,
                    t.checking_label,
                    cfg.margin,
                )
                .map_err(|e| match e {
                    Error::NonFinite(_) => Error::Diverged(format!(
                        "non-finite embedding at epoch {}, batch {batch_no}, anchor `{}`",
                        epoch + 1,
                        t.anchor_id
                    )),
                    other => other,
                })?;
                if !eval.loss.is_finite() {
                    return Err(Error::Diverged(format!(
                        "non-finite loss at epoch {}, batch {batch_no}, anchor `{}` (x1={}, x2={})",
                        epoch + 1,
                        t.anchor_id,
                        eval.x1,
                        eval.x2
                    )));
                }
                epoch_loss += eval.loss;
                if eval.loss == 0.0 {
                    continue;
                }
                for (f, g) in fw.iter().zip([&eval.grad_anchor, &eval.grad_tp, &eval.grad_tn]) {
                    let g32: Vec<f32> = g.iter().map(|&v| v as f32).collect();
                    let g_feat = model.head.backward(&f.features, &f.pre, &g32, &mut head_grads);
                    if let (Some(bg), Some(tr)) = (bb_grads.as_mut(), f.trace.as_ref()) {
                        model.backbone.backward(tr, &g_feat, bg);
                    }
                }
            }

            let scale = 1.0 / batch.len() as f32;
            head_grads.scale(scale);
            match bb_grads.as_mut() {
                Some(bg) => {
                    bg.scale(scale);
                    let params = model.backbone.tensors_mut().into_iter().chain(model.head.tensors_mut()).collect();
                    let grads = bg.tensors().into_iter().chain(head_grads.tensors()).collect();
                    adam.step(params, grads);
                }
                None => adam.step(model.head.tensors_mut(), head_grads.tensors()),
            }
        }
        let mean = epoch_loss / triplets.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Diverged(format!("non-finite mean loss after epoch {}", epoch + 1)));
        }
        loss_trace.push(mean);
    }

    let pathologies: Vec<PathologyId> =
        triplets.iter().map(|t| t.pathology).collect::<BTreeSet<_>>().into_iter().collect();
    Ok(TrainedEmbeddingModel {
        model,
        config: cfg.clone(),
        mode,
        pathologies,
        loss_trace,
        n_triplets: triplets.len(),
        wall_clock_secs: started.elapsed().as_secs_f64(),
    })
}
