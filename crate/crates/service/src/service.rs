use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc::{channel, Sender};
use std::sync::{Arc, Mutex, MutexGuard, Weak};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use base64::Engine;
use chrono::{DateTime, SecondsFormat, Utc};
use fsl_core::artifacts::BaselineArtifacts;
use fsl_core::eval::{partition_confusion, Cell, ConfusionPartition, InferenceRecord, MetricsReport, Outcome};
use fsl_core::ingest::{tensor_to_png, ImageStore, Label};
use fsl_core::model::ClassifierModel;
use fsl_core::repair::{run_repair, RepairConfig, RepairInputs};
use fsl_core::stats::ComparisonDocument;
use fsl_core::trainer::{TrainConfig, TrainMode, DEFAULT_SUPPORT_SIZE};
use fsl_core::triplets::TripletDatasetConfig;
use fsl_core::{PathologyId, PATHOLOGY_NAMES};
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;
use crate::events::{AllPathologies, Event, EventLog, JobOutcome, JobResult, PathologySelector, RelabelEvent, RetrainRequest, Verdict};
use crate::state::{JobRecord, JobStatus, LoopState};

pub const DEFAULT_PAGE_SIZE: usize = 20;
pub const MAX_PAGE_SIZE: usize = 500;

/// The baseline a service instance reviews and repairs. Immutable.
pub struct Workspace {
    pub classifier: ClassifierModel,
    pub classifier_checkpoint: String,
    pub images: ImageStore,
    pub inference: Vec<InferenceRecord>,
    pub baseline_report: MetricsReport,
    pub split_id: String,
    partition: ConfusionPartition,
    index: HashMap<(PathologyId, String), usize>,
}

impl Workspace {
    pub fn new(
        classifier: ClassifierModel,
        classifier_checkpoint: String,
        images: ImageStore,
        inference: Vec<InferenceRecord>,
        baseline_report: MetricsReport,
        split_id: String,
    ) -> Result<Workspace, ServiceError> {
        let partition = partition_confusion(&inference)?;
        let index = inference.iter().enumerate().map(|(i, r)| ((r.pathology, r.image_id.clone()), i)).collect();
        Ok(Workspace { classifier, classifier_checkpoint, images, inference, baseline_report, split_id, partition, index })
    }

    pub fn from_baseline(b: BaselineArtifacts) -> Result<Workspace, ServiceError> {
        Workspace::new(b.classifier, b.classifier_checkpoint, b.images, b.inference, b.report, b.split_id)
    }

    pub fn record(&self, p: PathologyId, image_id: &str) -> Option<&InferenceRecord> {
        self.index.get(&(p, image_id.to_string())).map(|&i| &self.inference[i])
    }

    pub fn baseline_partition(&self) -> &ConfusionPartition {
        &self.partition
    }
}

/// Cell implied by a reviewer verdict. The reviewer's reading replaces the
/// manifest truth; the model's decision is fixed.
pub fn verdict_cell(verdict: Verdict, decision: Outcome) -> Result<Cell, ServiceError> {
    match (verdict, decision) {
        (Verdict::ConfirmFp, Outcome::Positive) => Ok(Cell::FP),
        (Verdict::ConfirmFn, Outcome::Negative) => Ok(Cell::FN),
        (Verdict::BaselineCorrect, d) => Ok(Cell::of(d, d)),
        (v, d) => Err(ServiceError::Unprocessable(format!("verdict {v:?} is inconsistent with a {d:?} model decision"))),
    }
}

pub fn effective_partition(ws: &Workspace, state: &LoopState) -> ConfusionPartition {
    let mut part = ws.partition.clone();
    for (p, per) in &state.relabels {
        for (image_id, ev) in per {
            if let Some(rec) = ws.record(*p, image_id) {
                if let Ok(cell) = verdict_cell(ev.verdict, rec.decision) {
                    part.assign(*p, image_id, cell);
                }
            }
        }
    }
    part
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PathologySummary {
    pub index: usize,
    pub name: String,
    pub failures: usize,
    pub relabels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueueItem {
    pub image_id: String,
    pub pathology: PathologyId,
    pub probability: f64,
    pub decision: Outcome,
    pub truth: Outcome,
    pub baseline_cell: Cell,
    pub current_cell: Cell,
    pub verdict: Option<Verdict>,
    pub image_url: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailurePage {
    pub pathology: PathologyId,
    pub page: usize,
    pub page_size: usize,
    pub total: usize,
    pub items: Vec<QueueItem>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ImageView {
    pub image_id: String,
    pub width: usize,
    pub height: usize,
    pub labels: Vec<Label>,
    pub png_base64: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelabelAck {
    pub event_id: String,
    pub duplicate: bool,
}

/// Body of `POST /retrain`; omitted fields take defaults.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct RetrainBody {
    pub pathology: String,
    pub mode: Option<TrainMode>,
    pub n_train: Option<usize>,
    pub support_size: Option<usize>,
    pub config: Option<TrainConfig>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LatestReport {
    pub job_id: Option<String>,
    pub report: MetricsReport,
    pub comparison: Option<ComparisonDocument>,
}

struct Inner {
    state: LoopState,
    log: EventLog,
}

pub struct LoopService {
    ws: Arc<Workspace>,
    inner: Mutex<Inner>,
    data_dir: PathBuf,
    tx: Mutex<Option<Sender<String>>>,
    worker: Mutex<Option<JoinHandle<()>>>,
    running_now: AtomicUsize,
    max_running: AtomicUsize,
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Micros, true)
}

impl LoopService {
    /// Replay `data_dir/events.jsonl`, fail any job a previous process left
    /// running, requeue queued jobs, and start the worker.
    pub fn open(ws: Workspace, data_dir: &Path) -> Result<Arc<LoopService>, ServiceError> {
        let (mut log, events) = EventLog::open(&data_dir.join("events.jsonl"))?;
        let mut state = LoopState::replay(&events)?;
        if let Some(job_id) = state.running.clone() {
            let ev = Event::JobFinished {
                job_id,
                at: now(),
                outcome: JobOutcome::Failed { code: "interrupted".into(), message: "service stopped while the job ran".into() },
            };
            log.append(&ev)?;
            state.apply(&ev)?;
        }
        let pending = state.queue.clone();
        let (tx, rx) = channel::<String>();
        let svc = Arc::new(LoopService {
            ws: Arc::new(ws),
            inner: Mutex::new(Inner { state, log }),
            data_dir: data_dir.to_path_buf(),
            tx: Mutex::new(Some(tx.clone())),
            worker: Mutex::new(None),
            running_now: AtomicUsize::new(0),
            max_running: AtomicUsize::new(0),
        });
        let weak: Weak<LoopService> = Arc::downgrade(&svc);
        let handle = std::thread::Builder::new()
            .name("retrain-worker".into())
            .spawn(move || {
                while let Ok(job_id) = rx.recv() {
                    match weak.upgrade() {
                        Some(svc) => svc.run_job(&job_id),
                        None => break,
                    }
                }
            })
            .map_err(ServiceError::internal)?;
        *svc.worker.lock().unwrap() = Some(handle);
        for job in pending {
            let _ = tx.send(job);
        }
        Ok(svc)
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn workspace(&self) -> &Workspace {
        &self.ws
    }

    pub fn data_dir(&self) -> &Path {
        &self.data_dir
    }

    pub fn state(&self) -> LoopState {
        self.lock().state.clone()
    }

    pub fn events_path(&self) -> PathBuf {
        self.lock().log.path().to_path_buf()
    }

    /// Highest number of jobs seen executing at once.
    pub fn max_running_observed(&self) -> usize {
        self.max_running.load(Ordering::SeqCst)
    }

    pub fn pathologies(&self) -> Vec<PathologySummary> {
        let inner = self.lock();
        let part = effective_partition(&self.ws, &inner.state);
        PathologyId::all()
            .map(|p| PathologySummary {
                index: p.index(),
                name: PATHOLOGY_NAMES[p.index()].to_string(),
                failures: part.failed(p).len(),
                relabels: inner.state.relabels.get(&p).map_or(0, |m| m.len()),
            })
            .collect()
    }

    /// Baseline failures plus anything a reviewer has touched, by image id.
    pub fn list_failures(&self, p: PathologyId, page: usize, page_size: usize) -> Result<FailurePage, ServiceError> {
        if page == 0 {
            return Err(ServiceError::BadRequest("pages are numbered from 1".into()));
        }
        if page_size == 0 || page_size > MAX_PAGE_SIZE {
            return Err(ServiceError::BadRequest(format!("page_size must be in 1..={MAX_PAGE_SIZE}")));
        }
        let inner = self.lock();
        let mut ids: BTreeSet<String> = self.ws.partition.failed(p);
        if let Some(m) = inner.state.relabels.get(&p) {
            ids.extend(m.keys().cloned());
        }
        let total = ids.len();
        let items = ids
            .into_iter()
            .skip((page - 1) * page_size)
            .take(page_size)
            .filter_map(|id| {
                let rec = self.ws.record(p, &id)?;
                let verdict = inner.state.verdict(p, &id).map(|e| e.verdict);
                let current_cell = verdict.and_then(|v| verdict_cell(v, rec.decision).ok()).unwrap_or(rec.cell);
                Some(QueueItem {
                    image_url: format!("/images/{id}"),
                    image_id: id,
                    pathology: p,
                    probability: rec.probability,
                    decision: rec.decision,
                    truth: rec.truth,
                    baseline_cell: rec.cell,
                    current_cell,
                    verdict,
                })
            })
            .collect();
        Ok(FailurePage { pathology: p, page, page_size, total, items })
    }

    pub fn image(&self, image_id: &str) -> Result<ImageView, ServiceError> {
        let rec = self.ws.images.get(image_id).ok_or_else(|| ServiceError::NotFound(format!("unknown image `{image_id}`")))?;
        let png = tensor_to_png(&rec.pixels)?;
        Ok(ImageView {
            image_id: rec.image_id.clone(),
            width: rec.pixels.width(),
            height: rec.pixels.height(),
            labels: rec.labels.clone(),
            png_base64: base64::engine::general_purpose::STANDARD.encode(png),
        })
    }

    pub fn submit_relabel(&self, ev: RelabelEvent) -> Result<RelabelAck, ServiceError> {
        if ev.event_id.trim().is_empty() || ev.reviewer_id.trim().is_empty() {
            return Err(ServiceError::BadRequest("event_id and reviewer_id are required".into()));
        }
        DateTime::parse_from_rfc3339(&ev.timestamp)
            .map_err(|e| ServiceError::BadRequest(format!("timestamp `{}` is not RFC 3339: {e}", ev.timestamp)))?;
        let rec = self
            .ws
            .record(ev.pathology, &ev.image_id)
            .ok_or_else(|| ServiceError::NotFound(format!("no inference for `{}` / {}", ev.image_id, ev.pathology)))?;
        verdict_cell(ev.verdict, rec.decision)?;

        let mut inner = self.lock();
        if let Some(prev) = inner.state.relabel_events.get(&ev.event_id) {
            if *prev == ev {
                return Ok(RelabelAck { event_id: ev.event_id, duplicate: true });
            }
            return Err(ServiceError::Conflict(format!("event id `{}` already used for a different event", ev.event_id)));
        }
        let event = Event::Relabel(ev.clone());
        inner.log.append(&event)?;
        inner.state.apply(&event)?;
        Ok(RelabelAck { event_id: ev.event_id, duplicate: false })
    }

    fn resolve(&self, body: RetrainBody) -> Result<RetrainRequest, ServiceError> {
        let pathology = if body.pathology.eq_ignore_ascii_case("all") {
            PathologySelector::All(AllPathologies::All)
        } else {
            PathologySelector::One(body.pathology.parse()?)
        };
        let mode = body.mode.unwrap_or(match pathology {
            PathologySelector::One(_) => TrainMode::Tfsl,
            PathologySelector::All(_) => TrainMode::Incremental,
        });
        let config = body.config.unwrap_or_default();
        config.validate()?;
        let n_train = body.n_train.unwrap_or(150);
        let support_size = body.support_size.unwrap_or(DEFAULT_SUPPORT_SIZE);
        if n_train == 0 || support_size == 0 {
            return Err(ServiceError::BadRequest("n_train and support_size must be at least 1".into()));
        }
        Ok(RetrainRequest { pathology, mode, n_train, support_size, config })
    }

    pub fn enqueue_retrain(&self, body: RetrainBody) -> Result<JobRecord, ServiceError> {
        let request = self.resolve(body)?;
        let mut inner = self.lock();
        let part = effective_partition(&self.ws, &inner.state);
        let has_failures = match &request.pathology {
            PathologySelector::One(p) => !part.failed(*p).is_empty(),
            PathologySelector::All(_) => PathologyId::all().any(|p| !part.failed(p).is_empty()),
        };
        if !has_failures {
            return Err(ServiceError::Unprocessable("the failed set is empty; nothing to retrain on".into()));
        }
        if let Some(dup) =
            inner.state.queue.iter().find(|id| inner.state.jobs.get(*id).is_some_and(|j| j.request == request))
        {
            return Err(ServiceError::Conflict(format!("identical job {dup} is already queued")));
        }
        let job_id = inner.state.next_job_id();
        let event = Event::JobQueued { job_id: job_id.clone(), request, at: now() };
        inner.log.append(&event)?;
        inner.state.apply(&event)?;
        let record = inner.state.jobs[&job_id].clone();
        drop(inner);
        if let Some(tx) = self.tx.lock().unwrap().as_ref() {
            let _ = tx.send(job_id);
        }
        Ok(record)
    }

    pub fn job(&self, job_id: &str) -> Result<JobRecord, ServiceError> {
        self.lock().state.jobs.get(job_id).cloned().ok_or_else(|| ServiceError::NotFound(format!("unknown job `{job_id}`")))
    }

    pub fn jobs(&self) -> Vec<JobRecord> {
        self.lock().state.jobs.values().cloned().collect()
    }

    pub fn latest_report(&self) -> LatestReport {
        let inner = self.lock();
        let done = inner.state.latest_done.as_ref().and_then(|id| inner.state.jobs.get(id));
        match done.and_then(|j| j.result.as_ref().map(|r| (j, r))) {
            Some((job, r)) => LatestReport {
                job_id: Some(job.job_id.clone()),
                report: r.report.clone(),
                comparison: Some(r.comparison.clone()),
            },
            None => LatestReport { job_id: None, report: self.ws.baseline_report.clone(), comparison: None },
        }
    }

    /// Block until no job is queued or running, or the timeout passes.
    pub fn wait_idle(&self, timeout: Duration) -> bool {
        let start = Instant::now();
        loop {
            {
                let inner = self.lock();
                if inner.state.queue.is_empty() && inner.state.running.is_none() {
                    return true;
                }
            }
            if start.elapsed() > timeout {
                return false;
            }
            std::thread::sleep(Duration::from_millis(10));
        }
    }

    /// Stop accepting work and wait for the worker to finish its current job.
    pub fn shutdown(&self) {
        self.tx.lock().unwrap().take();
        if let Some(h) = self.worker.lock().unwrap().take() {
            if h.thread().id() != std::thread::current().id() {
                let _ = h.join();
            }
        }
    }

    fn run_job(&self, job_id: &str) {
        let (request, partition) = {
            let mut inner = self.lock();
            match inner.state.jobs.get(job_id) {
                Some(j) if j.status == JobStatus::Queued => {}
                _ => return,
            }
            let event = Event::JobStarted { job_id: job_id.to_string(), at: now() };
            if inner.log.append(&event).and_then(|_| inner.state.apply(&event)).is_err() {
                return;
            }
            (inner.state.jobs[job_id].request.clone(), effective_partition(&self.ws, &inner.state))
        };

        let running = self.running_now.fetch_add(1, Ordering::SeqCst) + 1;
        self.max_running.fetch_max(running, Ordering::SeqCst);
        let outcome = match self.execute(&request, &partition) {
            Ok(result) => JobOutcome::Done(Box::new(result)),
            Err(e) => JobOutcome::Failed { code: e.code(), message: e.to_string() },
        };
        self.running_now.fetch_sub(1, Ordering::SeqCst);

        let mut inner = self.lock();
        let event = Event::JobFinished { job_id: job_id.to_string(), at: now(), outcome };
        if inner.log.append(&event).and_then(|_| inner.state.apply(&event)).is_ok() {
            let snapshot = self.data_dir.join("state.json");
            let _ = std::fs::write(snapshot, inner.state.canonical_json());
        }
    }

    fn execute(&self, req: &RetrainRequest, partition: &ConfusionPartition) -> Result<JobResult, ServiceError> {
        let inputs = RepairInputs {
            classifier: &self.ws.classifier,
            classifier_checkpoint: &self.ws.classifier_checkpoint,
            images: &self.ws.images,
            partition,
            split_id: &self.ws.split_id,
        };
        let cfg = RepairConfig {
            mode: req.mode,
            pathologies: match req.pathology {
                PathologySelector::One(p) => Some(vec![p]),
                PathologySelector::All(_) => None,
            },
            triplets: TripletDatasetConfig { n_train: req.n_train, seed: req.config.seed },
            train: req.config.clone(),
            support_size: req.support_size,
            head_seed: req.config.seed,
        };
        let out = run_repair(&inputs, &cfg, &now())?;
        Ok(JobResult {
            checkpoint_id: out.after().provenance.checkpoint_id.clone(),
            training: out.training.clone(),
            skipped: out.plan.skipped.clone(),
            report: out.evaluation.after.clone(),
            before: out.evaluation.before.clone(),
            comparison: out.comparison,
        })
    }
}

impl Drop for LoopService {
    fn drop(&mut self) {
        self.tx.get_mut().unwrap_or_else(|e| e.into_inner()).take();
    }
}
