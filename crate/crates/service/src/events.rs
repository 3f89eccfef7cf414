use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use fsl_core::repair::SkippedPathology;
use fsl_core::eval::MetricsReport;
use fsl_core::stats::ComparisonDocument;
use fsl_core::trainer::{TrainConfig, TrainMode, TrainingRecord};
use fsl_core::PathologyId;
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    #[serde(rename = "confirm-FP", alias = "confirm-fp")]
    ConfirmFp,
    #[serde(rename = "confirm-FN", alias = "confirm-fn")]
    ConfirmFn,
    #[serde(rename = "baseline-correct")]
    BaselineCorrect,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelabelEvent {
    pub event_id: String,
    pub image_id: String,
    pub pathology: PathologyId,
    pub verdict: Verdict,
    pub reviewer_id: String,
    /// RFC 3339
    pub timestamp: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PathologySelector {
    One(PathologyId),
    All(AllPathologies),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AllPathologies {
    All,
}

/// A fully resolved retraining request, as stored in the log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrainRequest {
    pub pathology: PathologySelector,
    pub mode: TrainMode,
    pub n_train: usize,
    pub support_size: usize,
    pub config: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobResult {
    pub checkpoint_id: String,
    pub training: Vec<TrainingRecord>,
    pub skipped: Vec<SkippedPathology>,
    pub report: MetricsReport,
    pub before: MetricsReport,
    pub comparison: ComparisonDocument,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum JobOutcome {
    Done(Box<JobResult>),
    Failed { code: String, message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    Relabel(RelabelEvent),
    JobQueued { job_id: String, request: RetrainRequest, at: String },
    JobStarted { job_id: String, at: String },
    JobFinished { job_id: String, at: String, outcome: JobOutcome },
}

/// Append-only JSON-lines event log.
pub struct EventLog {
    path: PathBuf,
    file: File,
}

impl EventLog {
    pub fn open(path: &Path) -> Result<(EventLog, Vec<Event>), ServiceError> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| ServiceError::storage(dir, e))?;
        }
        let events = if path.exists() { read_events(path)? } else { Vec::new() };
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(|e| ServiceError::storage(path, e))?;
        Ok((EventLog { path: path.to_path_buf(), file }, events))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, event: &Event) -> Result<(), ServiceError> {
        let mut line = serde_json::to_vec(event).map_err(ServiceError::internal)?;
        line.push(b'\n');
        self.file.write_all(&line).map_err(|e| ServiceError::storage(&self.path, e))?;
        self.file.flush().map_err(|e| ServiceError::storage(&self.path, e))
    }
}

pub fn read_events(path: &Path) -> Result<Vec<Event>, ServiceError> {
    let file = File::open(path).map_err(|e| ServiceError::storage(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| ServiceError::storage(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let ev = serde_json::from_str(&line)
            .map_err(|e| ServiceError::Internal(format!("{}: line {}: {e}", path.display(), i + 1)))?;
        out.push(ev);
    }
    Ok(out)
}
