use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::euclidean_distance;
use crate::error::{Error, Result};
use crate::eval::{Cell, ConfusionPartition, Outcome};
use crate::ingest::{ImageStore, PixelTensor};
use crate::model::{embed_image, EmbeddingModel};
use crate::pathology::PathologyId;

pub const DEFAULT_SUPPORT_SIZE: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrototypeSet {
    pub pathology: PathologyId,
    pub tp_prototype: Vec<f64>,
    pub tn_prototype: Vec<f64>,
    pub tp_support: Vec<String>,
    pub tn_support: Vec<String>,
}

fn sample_support(pool: &BTreeSet<String>, size: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut ids: Vec<String> = pool.iter().cloned().collect();
    if ids.len() > size {
        ids.shuffle(rng);
        ids.truncate(size);
        ids.sort();
    }
    ids
}

fn mean_embedding(model: &EmbeddingModel, ids: &[String], images: &ImageStore) -> Result<Vec<f64>> {
    let mut sum: Vec<f64> = Vec::new();
    for id in ids {
        let e = embed_image(model, images.pixels(id)?)?;
        if sum.is_empty() {
            sum = vec![0.0; e.len()];
        }
        for (s, v) in sum.iter_mut().zip(&e) {
            *s += f64::from(*v);
        }
    }
    let n = ids.len() as f64;
    sum.iter_mut().for_each(|s| *s /= n);
    if sum.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("prototype".into()));
    }
    Ok(sum)
}

/// Mean embeddings of up to `support_size` baseline-correct TP and TN images.
pub fn compute_prototypes(
    model: &EmbeddingModel,
    partition: &ConfusionPartition,
    pathology: PathologyId,
    images: &ImageStore,
    support_size: usize,
    seed: u64,
) -> Result<PrototypeSet> {
    if support_size == 0 {
        return Err(Error::Config("support_size must be at least 1".into()));
    }
    let sets = partition.pathology(pathology);
    if sets.tp.is_empty() {
        return Err(Error::UnsatisfiableTriplet { pathology, pool: "TP" });
    }
    if sets.tn.is_empty() {
        return Err(Error::UnsatisfiableTriplet { pathology, pool: "TN" });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(pathology.index() as u64);
    let tp_support = sample_support(&sets.tp, support_size, &mut rng);
    let tn_support = sample_support(&sets.tn, support_size, &mut rng);
    Ok(PrototypeSet {
        pathology,
        tp_prototype: mean_embedding(model, &tp_support, images)?,
        tn_prototype: mean_embedding(model, &tn_support, images)?,
        tp_support,
        tn_support,
    })
}

/// Positive iff strictly closer to the TP prototype.
pub fn decide_by_prototype(embedding: &[f64], protos: &PrototypeSet) -> Result<Outcome> {
    let d_tp = euclidean_distance(embedding, &protos.tp_prototype)?;
    let d_tn = euclidean_distance(embedding, &protos.tn_prototype)?;
    Ok(Outcome::from_bool(d_tp < d_tn))
}

pub fn classify_by_prototype(model: &EmbeddingModel, pixels: &PixelTensor, protos: &PrototypeSet) -> Result<Outcome> {
    let e: Vec<f64> = embed_image(model, pixels)?.into_iter().map(f64::from).collect();
    decide_by_prototype(&e, protos)
}

/// Drop `training_anchors` from the pathology's cells and move each validation
/// anchor to the cell given by `decide` and its ground truth.
pub fn reclassify_with<F>(
    partition: &ConfusionPartition,
    pathology: PathologyId,
    validation_anchors: &BTreeSet<String>,
    training_anchors: &BTreeSet<String>,
    mut decide: F,
) -> Result<ConfusionPartition>
where
    F: FnMut(&str) -> Result<Outcome>,
{
    let sets = partition.pathology(pathology);
    for id in validation_anchors.iter().chain(training_anchors) {
        match sets.cell_of(id) {
            Some(c) if c.is_failure() => {}
            _ => return Err(Error::NotAFailure { image_id: id.clone(), pathology }),
        }
    }
    let mut out = partition.clone();
    for id in training_anchors {
        out.remove(pathology, id);
    }
    for id in validation_anchors {
        if training_anchors.contains(id) {
            continue;
        }
        let truth = sets.cell_of(id).expect("checked above").truth();
        out.assign(pathology, id, Cell::of(decide(id)?, truth));
    }
    Ok(out)
}

pub fn reclassify_failures(
    model: &EmbeddingModel,
    partition: &ConfusionPartition,
    pathology: PathologyId,
    protos: &PrototypeSet,
    validation_anchors: &BTreeSet<String>,
    training_anchors: &BTreeSet<String>,
    images: &ImageStore,
) -> Result<ConfusionPartition> {
    if protos.pathology != pathology {
        return Err(Error::InvalidArgument(format!(
            "prototypes are for {}, not {pathology}",
            protos.pathology
        )));
    }
    reclassify_with(partition, pathology, validation_anchors, training_anchors, |id| {
        classify_by_prototype(model, images.pixels(id)?, protos)
    })
}
