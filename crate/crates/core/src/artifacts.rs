//! On-disk layout of a run directory and the JSON artifacts in it.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{partition_confusion, read_inference_log, ConfusionPartition, InferenceRecord, MetricsReport};
use crate::ingest::{load_manifest, ImageRecord, ImageStore, PreprocessConfig, UncertainPolicy};
use crate::model::{checkpoint_id, load_checkpoint, ClassifierModel};
use crate::trainer::{TrainMode, TrainingRecord};

pub const LATEST_FILE: &str = "LATEST";

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    Error::create_parent(path)?;
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// How the run's images were loaded and split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub manifest: PathBuf,
    pub uncertain_policy: UncertainPolicy,
    pub preprocess: PreprocessConfig,
    pub train_fraction: f64,
    pub split_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub split_id: String,
    pub train_ids: Vec<String>,
    pub eval_ids: Vec<String>,
}

/// Which checkpoint serves which pathologies, for one training mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingManifest {
    pub mode: TrainMode,
    pub models: Vec<TrainedCheckpoint>,
    pub combined_checkpoint_id: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedCheckpoint {
    /// Relative to the training directory.
    pub file: String,
    pub record: TrainingRecord,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunDir {
    root: PathBuf,
}

fn mode_name(mode: TrainMode) -> &'static str {
    match mode {
        TrainMode::Tfsl => "tfsl",
        TrainMode::Incremental => "incremental",
    }
}

impl RunDir {
    /// Make `runs_root/<stamp>-seed<seed>` (suffixing `-2`, `-3`, … on a
    /// name clash) and point `LATEST` at it.
    pub fn create(runs_root: &Path, stamp: &str, seed: u64) -> Result<RunDir> {
        fs::create_dir_all(runs_root).map_err(|e| Error::io(runs_root, e))?;
        let base = format!("{stamp}-seed{seed}");
        let mut name = base.clone();
        let mut n = 1;
        let root = loop {
            let candidate = runs_root.join(&name);
            match fs::create_dir(&candidate) {
                Ok(()) => break candidate,
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    n += 1;
                    name = format!("{base}-{n}");
                }
                Err(e) => return Err(Error::io(candidate, e)),
            }
        };
        let latest = runs_root.join(LATEST_FILE);
        fs::write(&latest, format!("{name}\n")).map_err(|e| Error::io(latest, e))?;
        Ok(RunDir { root })
    }

    pub fn open(root: &Path) -> Result<RunDir> {
        if !root.is_dir() {
            return Err(Error::io(root, std::io::Error::new(std::io::ErrorKind::NotFound, "run directory not found")));
        }
        Ok(RunDir { root: root.to_path_buf() })
    }

    pub fn latest(runs_root: &Path) -> Result<RunDir> {
        let latest = runs_root.join(LATEST_FILE);
        let name = fs::read_to_string(&latest).map_err(|e| Error::io(&latest, e))?;
        RunDir::open(&runs_root.join(name.trim()))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn data_dir(&self) -> PathBuf {
        self.root.join("data")
    }
    pub fn dataset_config(&self) -> PathBuf {
        self.root.join("dataset.json")
    }
    pub fn split(&self) -> PathBuf {
        self.root.join("split.json")
    }
    pub fn classifier_checkpoint(&self) -> PathBuf {
        self.root.join("baseline/classifier.ckpt")
    }
    pub fn inference_log(&self) -> PathBuf {
        self.root.join("baseline/inference.jsonl")
    }
    pub fn baseline_report(&self) -> PathBuf {
        self.root.join("baseline/report.json")
    }
    pub fn triplets(&self) -> PathBuf {
        self.root.join("triplets/triplets.jsonl")
    }
    pub fn triplet_plan(&self) -> PathBuf {
        self.root.join("triplets/plan.json")
    }
    pub fn train_dir(&self, mode: TrainMode) -> PathBuf {
        self.root.join("train").join(mode_name(mode))
    }
    pub fn training_manifest(&self, mode: TrainMode) -> PathBuf {
        self.train_dir(mode).join("training.json")
    }
    pub fn eval_dir(&self, mode: TrainMode) -> PathBuf {
        self.root.join("eval").join(mode_name(mode))
    }
    pub fn before_report(&self, mode: TrainMode) -> PathBuf {
        self.eval_dir(mode).join("before.json")
    }
    pub fn after_report(&self, mode: TrainMode) -> PathBuf {
        self.eval_dir(mode).join("after.json")
    }
    pub fn evaluation(&self, mode: TrainMode) -> PathBuf {
        self.eval_dir(mode).join("evaluation.json")
    }
    pub fn comparison(&self, mode: TrainMode) -> PathBuf {
        self.root.join("compare").join(mode_name(mode)).join("comparison.json")
    }
    pub fn service_dir(&self) -> PathBuf {
        self.root.join("service")
    }
}

/// Records of both split halves, in `split.json` order.
pub fn load_split(run: &RunDir) -> Result<(Vec<ImageRecord>, Vec<ImageRecord>, SplitRecord)> {
    let dataset: DatasetConfig = read_json(&run.dataset_config())?;
    let split: SplitRecord = read_json(&run.split())?;
    let mut all: std::collections::HashMap<String, ImageRecord> =
        load_manifest(&dataset.manifest, dataset.uncertain_policy, &dataset.preprocess)?
            .into_iter()
            .map(|r| (r.image_id.clone(), r))
            .collect();
    let mut take = |ids: &[String]| -> Result<Vec<ImageRecord>> {
        ids.iter().map(|id| all.remove(id).ok_or_else(|| Error::UnknownImage(id.clone()))).collect()
    };
    let train = take(&split.train_ids)?;
    let eval = take(&split.eval_ids)?;
    Ok((train, eval, split))
}

/// Everything downstream stages need from the baseline step.
pub struct BaselineArtifacts {
    pub classifier: ClassifierModel,
    pub classifier_checkpoint: String,
    pub images: ImageStore,
    pub inference: Vec<InferenceRecord>,
    pub partition: ConfusionPartition,
    pub report: MetricsReport,
    pub split_id: String,
}

pub fn load_baseline(run: &RunDir) -> Result<BaselineArtifacts> {
    let (_, eval, split) = load_split(run)?;
    let ckpt = load_checkpoint(&run.classifier_checkpoint())?;
    let classifier_checkpoint = checkpoint_id(&ckpt)?;
    let classifier = ckpt.into_classifier()?;
    let inference = read_inference_log(&run.inference_log())?;
    let partition = partition_confusion(&inference)?;
    let report = read_json(&run.baseline_report())?;
    Ok(BaselineArtifacts {
        classifier,
        classifier_checkpoint,
        images: ImageStore::new(eval)?,
        inference,
        partition,
        report,
        split_id: split.split_id,
    })
}
