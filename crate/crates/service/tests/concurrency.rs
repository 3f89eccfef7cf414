mod common;

use std::time::Duration;

use axum::http::StatusCode;
use common::*;
use fsl_service::events::read_events;
use fsl_service::{router, Event, JobStatus, LoopState};
use serde_json::json;

#[tokio::test(flavor = "multi_thread", worker_threads = 8)]
async fn hundred_parallel_retrains_run_one_at_a_time() {
    let dir = tempfile::tempdir().unwrap();
    let svc = open(dir.path());
    let app = router(svc.clone());

    let handles: Vec<_> = (0..100u64)
        .map(|seed| {
            let app = app.clone();
            tokio::spawn(async move {
                let pathology = if seed % 2 == 0 { "P0" } else { "P1" };
                let body = json!({"pathology": pathology, "n_train": 4, "support_size": 4, "config": quick_config(seed)});
                call(&app, "POST", "/retrain", Some(body)).await
            })
        })
        .collect();
    let mut ids = Vec::new();
    for h in handles {
        let (status, job) = h.await.unwrap();
        assert_eq!(status, StatusCode::ACCEPTED, "{job}");
        ids.push(job["job_id"].as_str().unwrap().to_string());
    }
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), 100);

    assert!(svc.wait_idle(Duration::from_secs(300)));
    assert_eq!(svc.max_running_observed(), 1);
    let state = svc.state();
    assert_eq!(state.overlap_violations, 0);
    assert!(state.jobs.values().all(|j| j.status == JobStatus::Done), "some jobs failed");

    // In log order every start is followed by its own finish before the next start.
    let events = read_events(&svc.events_path()).unwrap();
    let mut open_job: Option<String> = None;
    let mut finished = 0;
    for ev in &events {
        match ev {
            Event::JobStarted { job_id, .. } => {
                assert!(open_job.is_none(), "{job_id} started while {open_job:?} ran");
                open_job = Some(job_id.clone());
            }
            Event::JobFinished { job_id, .. } => {
                assert_eq!(open_job.take().as_deref(), Some(job_id.as_str()));
                finished += 1;
            }
            _ => {}
        }
    }
    assert_eq!(finished, 100);
    assert_eq!(LoopState::replay(&events).unwrap().canonical_json(), state.canonical_json());
}
