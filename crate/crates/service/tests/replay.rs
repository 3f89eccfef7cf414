mod common;

use std::time::Duration;

use axum::http::StatusCode;
use common::*;
use fsl_service::events::read_events;
use fsl_service::{router, LoopService, LoopState};
use serde_json::json;

#[tokio::test]
async fn replaying_the_log_reproduces_state_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let svc = open(dir.path());
    let app = router(svc.clone());
    let (_, page) = call(&app, "GET", "/failures?pathology=P0&page_size=500", None).await;
    for (k, item) in page["items"].as_array().unwrap().iter().take(6).enumerate() {
        let verdict = if k % 2 == 0 { "baseline-correct" } else if item["decision"] == "negative" { "confirm-FN" } else { "confirm-FP" };
        let ev = json!({"event_id": format!("e{k}"), "image_id": item["image_id"], "pathology": "P0",
            "verdict": verdict, "reviewer_id": "r", "timestamp": format!("2026-03-0{}T10:00:00Z", k + 1)});
        assert_eq!(call(&app, "POST", "/relabels", Some(ev)).await.0, StatusCode::CREATED);
    }
    for seed in 0..3u64 {
        let body = json!({"pathology": "P0", "n_train": 4, "support_size": 4, "config": quick_config(seed)});
        assert_eq!(call(&app, "POST", "/retrain", Some(body)).await.0, StatusCode::ACCEPTED);
    }
    assert!(svc.wait_idle(Duration::from_secs(120)));

    let live = svc.state().canonical_json();
    let events = read_events(&svc.events_path()).unwrap();
    let replayed = LoopState::replay(&events).unwrap();
    assert_eq!(String::from_utf8(replayed.canonical_json()).unwrap(), String::from_utf8(live.clone()).unwrap());
    assert_eq!(std::fs::read(dir.path().join("state.json")).unwrap(), live);
    assert_eq!(replayed.relabel_events.len(), 6);
    assert_eq!(replayed.jobs.len(), 3);

    // A fresh service over the same directory recovers the same state.
    svc.shutdown();
    drop(app);
    drop(svc);
    let reopened = LoopService::open(workspace(), dir.path()).unwrap();
    assert_eq!(reopened.state().canonical_json(), live);
    reopened.shutdown();
}

#[test]
fn canonical_json_is_independent_of_relabel_arrival_order() {
    use fsl_service::{Event, RelabelEvent, Verdict};
    let ev = |id: &str, img: &str, v: Verdict, ts: &str| {
        Event::Relabel(RelabelEvent {
            event_id: id.into(),
            image_id: img.into(),
            pathology: fsl_core::PathologyId::new(1).unwrap(),
            verdict: v,
            reviewer_id: "r".into(),
            timestamp: ts.into(),
        })
    };
    let a = vec![
        ev("1", "x", Verdict::ConfirmFn, "2026-01-01T00:00:00Z"),
        ev("2", "x", Verdict::BaselineCorrect, "2026-01-02T00:00:00Z"),
        ev("3", "y", Verdict::ConfirmFp, "2026-01-01T00:00:00Z"),
    ];
    let b = vec![a[2].clone(), a[1].clone(), a[0].clone()];
    let sa = LoopState::replay(&a).unwrap();
    let sb = LoopState::replay(&b).unwrap();
    assert_eq!(sa.canonical_json(), sb.canonical_json());
    assert_eq!(sa.verdict(fsl_core::PathologyId::new(1).unwrap(), "x").unwrap().event_id, "2");
}

#[test]
fn interrupted_running_job_is_failed_on_restart() {
    use fsl_service::events::EventLog;
    use fsl_service::Event;
    let dir = tempfile::tempdir().unwrap();
    let svc = open(dir.path());
    let body: fsl_service::RetrainBody =
        serde_json::from_value(json!({"pathology": "P0", "n_train": 4, "support_size": 4, "config": quick_config(0)})).unwrap();
    let job = svc.enqueue_retrain(body).unwrap();
    assert!(svc.wait_idle(Duration::from_secs(60)));
    svc.shutdown();
    drop(svc);

    // Simulate a crash mid-job: a started event with no matching finish.
    let (mut log, events) = EventLog::open(&dir.path().join("events.jsonl")).unwrap();
    let mut state = LoopState::replay(&events).unwrap();
    let job_id = state.next_job_id();
    let queued = Event::JobQueued { job_id: job_id.clone(), request: job.request.clone(), at: "2026-01-01T00:00:00Z".into() };
    state.apply(&queued).unwrap();
    log.append(&queued).unwrap();
    let started = Event::JobStarted { job_id, at: "2026-01-01T00:00:01Z".into() };
    log.append(&started).unwrap();
    drop(log);

    let svc = open(dir.path());
    let jobs = svc.jobs();
    assert_eq!(jobs.len(), 2);
    assert_eq!(jobs[1].status, fsl_service::JobStatus::Failed);
    assert_eq!(jobs[1].error.as_ref().unwrap().code, "interrupted");
    let replayed = LoopState::replay(&read_events(&svc.events_path()).unwrap()).unwrap();
    assert_eq!(replayed.canonical_json(), svc.state().canonical_json());
}
