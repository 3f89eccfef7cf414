//! The retraining pass, in stages: triplet plan, training, prototype
//! re-decision of held-out failures, and before/after reports.
//! `run_repair` chains them; the CLI runs them one at a time.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::{build_report, ConfusionPartition, MetricsReport, Provenance};
use crate::ingest::ImageStore;
use crate::model::{swap_embedding_head, ClassifierModel, EmbeddingModel};
use crate::pathology::PathologyId;
use crate::stats::{compare_reports, ComparisonDocument};
use crate::trainer::{
    compute_prototypes, reclassify_failures, train_incremental, train_tfsl, PrototypeSet, TrainConfig, TrainMode,
    TrainedEmbeddingModel, TrainingRecord, DEFAULT_SUPPORT_SIZE,
};
use crate::triplets::{build_triplet_sets, ImageTriplet, TripletDatasetConfig, TripletRow, TripletSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedPathology {
    pub pathology: PathologyId,
    pub code: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathologyTriplets {
    pub pathology: PathologyId,
    pub train: Vec<ImageTriplet>,
    pub val: Vec<ImageTriplet>,
}

impl PathologyTriplets {
    pub fn training_anchors(&self) -> BTreeSet<String> {
        self.train.iter().map(|t| t.anchor_id.clone()).collect()
    }

    pub fn validation_anchors(&self) -> BTreeSet<String> {
        self.val.iter().map(|t| t.anchor_id.clone()).collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TripletPlan {
    pub entries: Vec<PathologyTriplets>,
    pub skipped: Vec<SkippedPathology>,
}

/// Build triplets for each target. With `None` every pathology is tried and
/// those without failures or without a TP/TN pool are skipped; an explicit
/// list makes those conditions errors.
pub fn build_triplet_plan(
    partition: &ConfusionPartition,
    pathologies: Option<&[PathologyId]>,
    cfg: &TripletDatasetConfig,
) -> Result<TripletPlan> {
    let targets: Vec<PathologyId> = match pathologies {
        Some([]) => return Err(Error::InvalidArgument("empty pathology list".into())),
        Some(ps) => ps.to_vec(),
        None => PathologyId::all().collect(),
    };
    let mut plan = TripletPlan::default();
    for p in targets {
        match build_triplet_sets(partition, p, cfg) {
            Ok((train, val)) => plan.entries.push(PathologyTriplets { pathology: p, train, val }),
            Err(e @ (Error::Empty(_) | Error::UnsatisfiableTriplet { .. })) if pathologies.is_none() => {
                plan.skipped.push(SkippedPathology { pathology: p, code: e.code().into(), reason: e.to_string() })
            }
            Err(e) => return Err(e),
        }
    }
    if plan.entries.is_empty() {
        return Err(Error::Empty("no pathology has failed inferences to learn from".into()));
    }
    Ok(plan)
}

impl TripletPlan {
    pub fn rows(&self) -> Vec<TripletRow> {
        let mut rows = Vec::new();
        for e in &self.entries {
            rows.extend(e.train.iter().map(|t| TripletRow { triplet: t.clone(), set: TripletSet::Train }));
            rows.extend(e.val.iter().map(|t| TripletRow { triplet: t.clone(), set: TripletSet::Val }));
        }
        rows
    }

    /// Regroup rows by pathology, keeping first-seen order.
    pub fn from_rows(rows: Vec<TripletRow>, skipped: Vec<SkippedPathology>) -> TripletPlan {
        let mut entries: Vec<PathologyTriplets> = Vec::new();
        for row in rows {
            let p = row.triplet.pathology;
            let idx = match entries.iter().position(|e| e.pathology == p) {
                Some(i) => i,
                None => {
                    entries.push(PathologyTriplets { pathology: p, train: vec![], val: vec![] });
                    entries.len() - 1
                }
            };
            match row.set {
                TripletSet::Train => entries[idx].train.push(row.triplet),
                TripletSet::Val => entries[idx].val.push(row.triplet),
            }
        }
        TripletPlan { entries, skipped }
    }

    /// Keep only `p`'s entry.
    pub fn restrict(&self, p: PathologyId) -> Result<TripletPlan> {
        let entry = self
            .entries
            .iter()
            .find(|e| e.pathology == p)
            .ok_or_else(|| Error::Empty(format!("no triplets for {p}")))?;
        Ok(TripletPlan { entries: vec![entry.clone()], skipped: vec![] })
    }
}

/// One model per pathology for per-pathology mode; a single pooled model for
/// incremental mode.
pub fn train_plan(
    classifier: &ClassifierModel,
    plan: &TripletPlan,
    mode: TrainMode,
    cfg: &TrainConfig,
    head_seed: u64,
    images: &ImageStore,
) -> Result<Vec<TrainedEmbeddingModel>> {
    let base = swap_embedding_head(classifier, head_seed);
    match mode {
        TrainMode::Tfsl => plan
            .entries
            .iter()
            .map(|e| {
                if e.train.is_empty() {
                    return Err(Error::Empty(format!("no training triplets for {}", e.pathology)));
                }
                train_tfsl(base.clone(), &e.train, images, cfg)
            })
            .collect(),
        TrainMode::Incremental => {
            let pooled: Vec<ImageTriplet> = plan.entries.iter().flat_map(|e| e.train.iter().cloned()).collect();
            Ok(vec![train_incremental(base, &pooled, images, cfg)?])
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathologyEvaluation {
    pub pathology: PathologyId,
    pub n_training_anchors: usize,
    pub n_validation_anchors: usize,
    pub prototypes: PrototypeSet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanEvaluation {
    pub per_pathology: Vec<PathologyEvaluation>,
    pub before: MetricsReport,
    pub after: MetricsReport,
    pub after_partition: ConfusionPartition,
}

/// Models paired with the pathologies each one serves.
pub type ModelAssignment<'a> = [(&'a [PathologyId], &'a EmbeddingModel)];

/// Stable id for a set of checkpoints (the id itself when there is one).
pub fn combined_checkpoint_id(ids: &[String]) -> String {
    if ids.len() == 1 {
        return ids[0].clone();
    }
    let mut h = Sha256::new();
    for id in ids {
        h.update(id.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())[..16].to_string()
}

#[derive(Clone, Debug)]
pub struct EvalContext<'a> {
    pub partition: &'a ConfusionPartition,
    pub images: &'a ImageStore,
    pub split_id: &'a str,
    pub baseline_checkpoint: &'a str,
    pub after_checkpoint: &'a str,
    pub timestamp: &'a str,
    pub support_size: usize,
    pub seed: u64,
}

/// "Before": the baseline partition without the training anchors.
/// "After": the same, with every validation anchor re-decided by prototype.
pub fn evaluate_plan(plan: &TripletPlan, models: &ModelAssignment<'_>, ctx: &EvalContext<'_>) -> Result<PlanEvaluation> {
    let mut before = ctx.partition.clone();
    let mut after = ctx.partition.clone();
    let mut per_pathology = Vec::new();
    for e in &plan.entries {
        let p = e.pathology;
        let model = models
            .iter()
            .find(|(ps, _)| ps.contains(&p))
            .map(|(_, m)| *m)
            .ok_or_else(|| Error::InvalidArgument(format!("no trained model covers {p}")))?;
        let train_ids = e.training_anchors();
        let val_ids = e.validation_anchors();
        for id in &train_ids {
            before.remove(p, id);
        }
        let protos = compute_prototypes(model, ctx.partition, p, ctx.images, ctx.support_size, ctx.seed)?;
        let updated = reclassify_failures(model, ctx.partition, p, &protos, &val_ids, &train_ids, ctx.images)?;
        after.replace_pathology(p, updated.pathology(p).clone());
        per_pathology.push(PathologyEvaluation {
            pathology: p,
            n_training_anchors: train_ids.len(),
            n_validation_anchors: val_ids.len(),
            prototypes: protos,
        });
    }
    let provenance = |checkpoint: &str| Provenance {
        checkpoint_id: checkpoint.to_string(),
        split_id: ctx.split_id.to_string(),
        timestamp: ctx.timestamp.to_string(),
    };
    Ok(PlanEvaluation {
        per_pathology,
        before: build_report(&before, provenance(ctx.baseline_checkpoint)),
        after: build_report(&after, provenance(ctx.after_checkpoint)),
        after_partition: after,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepairConfig {
    pub mode: TrainMode,
    /// `None` means every pathology that has failures to learn from.
    pub pathologies: Option<Vec<PathologyId>>,
    pub triplets: TripletDatasetConfig,
    pub train: TrainConfig,
    pub support_size: usize,
    pub head_seed: u64,
}

impl RepairConfig {
    pub fn new(mode: TrainMode, pathologies: Option<Vec<PathologyId>>, seed: u64) -> Self {
        RepairConfig {
            mode,
            pathologies,
            triplets: TripletDatasetConfig { n_train: 150, seed },
            train: TrainConfig { seed, ..TrainConfig::default() },
            support_size: DEFAULT_SUPPORT_SIZE,
            head_seed: seed,
        }
    }
}

/// Inputs shared by every repair run on one evaluation split.
#[derive(Clone, Copy)]
pub struct RepairInputs<'a> {
    pub classifier: &'a ClassifierModel,
    pub classifier_checkpoint: &'a str,
    pub images: &'a ImageStore,
    pub partition: &'a ConfusionPartition,
    pub split_id: &'a str,
}

#[derive(Clone, Debug)]
pub struct RepairOutcome {
    pub mode: TrainMode,
    pub plan: TripletPlan,
    pub models: Vec<TrainedEmbeddingModel>,
    pub training: Vec<TrainingRecord>,
    pub evaluation: PlanEvaluation,
    pub comparison: ComparisonDocument,
}

impl RepairOutcome {
    pub fn before(&self) -> &MetricsReport {
        &self.evaluation.before
    }

    pub fn after(&self) -> &MetricsReport {
        &self.evaluation.after
    }
}

pub fn run_repair(inputs: &RepairInputs<'_>, cfg: &RepairConfig, timestamp: &str) -> Result<RepairOutcome> {
    cfg.train.validate()?;
    let plan = build_triplet_plan(inputs.partition, cfg.pathologies.as_deref(), &cfg.triplets)?;
    let models = train_plan(inputs.classifier, &plan, cfg.mode, &cfg.train, cfg.head_seed, inputs.images)?;
    let training: Vec<TrainingRecord> = models.iter().map(|m| m.record()).collect::<Result<_>>()?;
    let ids: Vec<String> = training.iter().map(|r| r.checkpoint_id.clone()).collect();
    let after_checkpoint = combined_checkpoint_id(&ids);
    let assignment: Vec<(&[PathologyId], &EmbeddingModel)> =
        models.iter().map(|m| (m.pathologies.as_slice(), &m.model)).collect();
    let evaluation = evaluate_plan(
        &plan,
        &assignment,
        &EvalContext {
            partition: inputs.partition,
            images: inputs.images,
            split_id: inputs.split_id,
            baseline_checkpoint: inputs.classifier_checkpoint,
            after_checkpoint: &after_checkpoint,
            timestamp,
            support_size: cfg.support_size,
            seed: cfg.train.seed,
        },
    )?;
    let comparison = compare_reports(&evaluation.before, &evaluation.after)?;
    Ok(RepairOutcome { mode: cfg.mode, plan, models, training, evaluation, comparison })
}
