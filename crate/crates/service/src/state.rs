use std::collections::BTreeMap;

use chrono::DateTime;
use fsl_core::PathologyId;
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;
use crate::events::{Event, JobOutcome, JobResult, RelabelEvent, RetrainRequest};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobError {
    pub code: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub job_id: String,
    pub request: RetrainRequest,
    pub status: JobStatus,
    pub queued_at: String,
    pub started_at: Option<String>,
    pub finished_at: Option<String>,
    pub result: Option<JobResult>,
    pub error: Option<JobError>,
}

/// Everything derivable from the event log. Maps are ordered so the JSON
/// form is canonical.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LoopState {
    /// Effective verdict per (pathology, image).
    pub relabels: BTreeMap<PathologyId, BTreeMap<String, RelabelEvent>>,
    /// Every accepted relabel, by event id.
    pub relabel_events: BTreeMap<String, RelabelEvent>,
    pub jobs: BTreeMap<String, JobRecord>,
    /// Queued job ids, oldest first.
    pub queue: Vec<String>,
    pub running: Option<String>,
    pub jobs_created: u64,
    pub latest_done: Option<String>,
    /// Times a job started while another was running. Always zero unless the
    /// single-worker rule was broken.
    pub overlap_violations: u64,
}

fn order_key(ev: &RelabelEvent) -> (Option<i64>, &str, &str) {
    let nanos = DateTime::parse_from_rfc3339(&ev.timestamp).ok().and_then(|t| t.timestamp_nanos_opt());
    (nanos, ev.timestamp.as_str(), ev.event_id.as_str())
}

/// True if `a` supersedes `b`: later timestamp, ties broken by event id.
pub fn supersedes(a: &RelabelEvent, b: &RelabelEvent) -> bool {
    order_key(a) >= order_key(b)
}

impl LoopState {
    pub fn replay<'a>(events: impl IntoIterator<Item = &'a Event>) -> Result<LoopState, ServiceError> {
        let mut s = LoopState::default();
        for e in events {
            s.apply(e)?;
        }
        Ok(s)
    }

    pub fn canonical_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("state serializes")
    }

    pub fn verdict(&self, p: PathologyId, image_id: &str) -> Option<&RelabelEvent> {
        self.relabels.get(&p).and_then(|m| m.get(image_id))
    }

    pub fn next_job_id(&self) -> String {
        format!("job-{:06}", self.jobs_created + 1)
    }

    pub fn apply(&mut self, event: &Event) -> Result<(), ServiceError> {
        match event {
            Event::Relabel(ev) => {
                if self.relabel_events.contains_key(&ev.event_id) {
                    return Ok(());
                }
                self.relabel_events.insert(ev.event_id.clone(), ev.clone());
                let per = self.relabels.entry(ev.pathology).or_default();
                match per.get(&ev.image_id) {
                    Some(cur) if !supersedes(ev, cur) => {}
                    _ => {
                        per.insert(ev.image_id.clone(), ev.clone());
                    }
                }
            }
            Event::JobQueued { job_id, request, at } => {
                if self.jobs.contains_key(job_id) {
                    return Err(ServiceError::Internal(format!("job {job_id} queued twice")));
                }
                self.jobs.insert(
                    job_id.clone(),
                    JobRecord {
                        job_id: job_id.clone(),
                        request: request.clone(),
                        status: JobStatus::Queued,
                        queued_at: at.clone(),
                        started_at: None,
                        finished_at: None,
                        result: None,
                        error: None,
                    },
                );
                self.queue.push(job_id.clone());
                self.jobs_created += 1;
            }
            Event::JobStarted { job_id, at } => {
                let job = self.job_mut(job_id)?;
                if job.status != JobStatus::Queued {
                    return Err(ServiceError::Internal(format!("job {job_id} started from {:?}", job.status)));
                }
                job.status = JobStatus::Running;
                job.started_at = Some(at.clone());
                self.queue.retain(|j| j != job_id);
                if self.running.is_some() {
                    self.overlap_violations += 1;
                }
                self.running = Some(job_id.clone());
            }
            Event::JobFinished { job_id, at, outcome } => {
                let job = self.job_mut(job_id)?;
                if job.status != JobStatus::Running {
                    return Err(ServiceError::Internal(format!("job {job_id} finished from {:?}", job.status)));
                }
                job.finished_at = Some(at.clone());
                let done = match outcome {
                    JobOutcome::Done(result) => {
                        job.status = JobStatus::Done;
                        job.result = Some((**result).clone());
                        true
                    }
                    JobOutcome::Failed { code, message } => {
                        job.status = JobStatus::Failed;
                        job.error = Some(JobError { code: code.clone(), message: message.clone() });
                        false
                    }
                };
                if self.running.as_deref() == Some(job_id.as_str()) {
                    self.running = None;
                }
                if done {
                    let newer = match self.latest_done.as_ref().and_then(|id| self.jobs.get(id)) {
                        Some(prev) => (prev.finished_at.as_deref(), prev.job_id.as_str()) <= (Some(at.as_str()), job_id.as_str()),
                        None => true,
                    };
                    if newer {
                        self.latest_done = Some(job_id.clone());
                    }
                }
            }
        }
        Ok(())
    }

    fn job_mut(&mut self, job_id: &str) -> Result<&mut JobRecord, ServiceError> {
        self.jobs.get_mut(job_id).ok_or_else(|| ServiceError::Internal(format!("event for unknown job {job_id}")))
    }
}
