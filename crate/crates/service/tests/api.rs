mod common;

use std::time::Duration;

use axum::http::StatusCode;
use common::*;
use fsl_service::router;
use serde_json::{json, Value};

fn first_failure(page: &Value, decision: &str) -> Option<String> {
    page["items"].as_array().unwrap().iter().find(|i| i["decision"] == decision).map(|i| i["image_id"].as_str().unwrap().to_string())
}

#[tokio::test]
async fn pathologies_lists_all_fourteen() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(open(dir.path()));
    let (status, body) = call(&app, "GET", "/pathologies", None).await;
    assert_eq!(status, StatusCode::OK);
    let list = body.as_array().unwrap();
    assert_eq!(list.len(), 14);
    assert_eq!(list[0]["name"], "No Finding");
    assert!(list[0]["failures"].as_u64().unwrap() > 0);
    assert_eq!(list[5]["failures"], 0);
}

#[tokio::test]
async fn failure_queue_is_sorted_and_paged() {
    let dir = tempfile::tempdir().unwrap();
    let svc = open(dir.path());
    let app = router(svc.clone());
    let expected: Vec<String> = svc.workspace().baseline_partition().failed(fsl_core::PathologyId::new(0).unwrap()).into_iter().collect();
    let (status, p1) = call(&app, "GET", "/failures?pathology=No%20Finding&page=1&page_size=3", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(p1["total"].as_u64().unwrap() as usize, expected.len());
    let ids: Vec<&str> = p1["items"].as_array().unwrap().iter().map(|i| i["image_id"].as_str().unwrap()).collect();
    assert_eq!(ids, expected.iter().take(3).map(String::as_str).collect::<Vec<_>>());
    assert!(p1["items"][0]["verdict"].is_null());
    let (_, p2) = call(&app, "GET", "/failures?pathology=P0&page=2&page_size=3", None).await;
    assert_eq!(p2["items"][0]["image_id"], expected[3].as_str());

    let (_, empty) = call(&app, "GET", "/failures?pathology=Fracture", None).await;
    assert_eq!(empty["total"], 0);
    assert_eq!(empty["page_size"], 20);
    let (status, err) = call(&app, "GET", "/failures?pathology=Nonsense", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["code"], "unknown_pathology");
    let (status, _) = call(&app, "GET", "/failures?pathology=P0&page=0", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn image_endpoint_returns_png() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(open(dir.path()));
    let (_, page) = call(&app, "GET", "/failures?pathology=P0", None).await;
    let id = page["items"][0]["image_id"].as_str().unwrap().to_string();
    let url = page["items"][0]["image_url"].as_str().unwrap().to_string();
    let (status, img) = call(&app, "GET", &url, None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(img["image_id"], id.as_str());
    use base64::Engine;
    let png = base64::engine::general_purpose::STANDARD.decode(img["png_base64"].as_str().unwrap()).unwrap();
    assert_eq!(&png[1..4], b"PNG");
    let (status, err) = call(&app, "GET", "/images/missing.png", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(err["code"], "not_found");
}

#[tokio::test]
async fn relabels_are_idempotent_and_validated() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(open(dir.path()));
    let (_, page) = call(&app, "GET", "/failures?pathology=P0&page_size=500", None).await;
    let fn_id = first_failure(&page, "negative").unwrap();
    let ev = json!({
        "event_id": "e1", "image_id": fn_id, "pathology": "No Finding",
        "verdict": "baseline-correct", "reviewer_id": "r1", "timestamp": "2026-03-01T10:00:00Z"
    });
    let (status, ack) = call(&app, "POST", "/relabels", Some(ev.clone())).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(ack["duplicate"], false);
    let (status, ack) = call(&app, "POST", "/relabels", Some(ev.clone())).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ack["duplicate"], true);

    let (_, page) = call(&app, "GET", "/failures?pathology=P0&page_size=500", None).await;
    let item = page["items"].as_array().unwrap().iter().find(|i| i["image_id"] == fn_id.as_str()).unwrap();
    assert_eq!(item["verdict"], "baseline-correct");
    assert_eq!(item["current_cell"], "TN");
    assert_eq!(item["baseline_cell"], "FN");

    let mut reused = ev.clone();
    reused["verdict"] = json!("confirm-FN");
    let (status, _) = call(&app, "POST", "/relabels", Some(reused)).await;
    assert_eq!(status, StatusCode::CONFLICT);

    // A negative decision cannot be a confirmed false positive.
    let bad = json!({
        "event_id": "e2", "image_id": fn_id, "pathology": "No Finding",
        "verdict": "confirm-FP", "reviewer_id": "r1", "timestamp": "2026-03-01T10:00:00Z"
    });
    let (status, _) = call(&app, "POST", "/relabels", Some(bad)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let malformed = json!({
        "event_id": "e3", "image_id": fn_id, "pathology": "No Finding",
        "verdict": "maybe", "reviewer_id": "r1", "timestamp": "2026-03-01T10:00:00Z"
    });
    let (status, _) = call(&app, "POST", "/relabels", Some(malformed)).await;
    assert!(status.is_client_error());
    let unknown = json!({
        "event_id": "e4", "image_id": "nope.png", "pathology": "No Finding",
        "verdict": "confirm-FN", "reviewer_id": "r1", "timestamp": "2026-03-01T10:00:00Z"
    });
    let (status, _) = call(&app, "POST", "/relabels", Some(unknown)).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn latest_verdict_wins_by_timestamp_then_event_id() {
    let dir = tempfile::tempdir().unwrap();
    let svc = open(dir.path());
    let app = router(svc.clone());
    let (_, page) = call(&app, "GET", "/failures?pathology=P0&page_size=500", None).await;
    let id = first_failure(&page, "negative").unwrap();
    let ev = |eid: &str, verdict: &str, ts: &str| {
        json!({"event_id": eid, "image_id": id, "pathology": "P0", "verdict": verdict, "reviewer_id": "r", "timestamp": ts})
    };
    call(&app, "POST", "/relabels", Some(ev("b", "baseline-correct", "2026-03-01T10:00:00Z"))).await;
    // Older timestamp arrives later: ignored.
    call(&app, "POST", "/relabels", Some(ev("c", "confirm-FN", "2026-03-01T09:00:00Z"))).await;
    let p = fsl_core::PathologyId::new(0).unwrap();
    assert_eq!(svc.state().verdict(p, &id).unwrap().event_id, "b");
    // Same instant, larger event id: wins.
    call(&app, "POST", "/relabels", Some(ev("d", "confirm-FN", "2026-03-01T11:00:00+01:00"))).await;
    assert_eq!(svc.state().verdict(p, &id).unwrap().event_id, "d");
    call(&app, "POST", "/relabels", Some(ev("a", "baseline-correct", "2026-03-01T10:00:00Z"))).await;
    assert_eq!(svc.state().verdict(p, &id).unwrap().event_id, "d");
}

#[tokio::test]
async fn baseline_correct_verdict_removes_image_from_next_triplet_build() {
    let dir = tempfile::tempdir().unwrap();
    let svc = open(dir.path());
    let app = router(svc.clone());
    let (_, page) = call(&app, "GET", "/failures?pathology=P0&page_size=500", None).await;
    let items = page["items"].as_array().unwrap().clone();
    // Clear every failure but the first; the next job can only use that one.
    for (k, item) in items.iter().enumerate().skip(1) {
        let ev = json!({"event_id": format!("x{k}"), "image_id": item["image_id"], "pathology": "P0",
            "verdict": "baseline-correct", "reviewer_id": "r", "timestamp": "2026-03-01T10:00:00Z"});
        assert_eq!(call(&app, "POST", "/relabels", Some(ev)).await.0, StatusCode::CREATED);
    }
    let (status, job) =
        call(&app, "POST", "/retrain", Some(json!({"pathology": "P0", "n_train": 150, "support_size": 4, "config": quick_config(1)}))).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    assert!(svc.wait_idle(Duration::from_secs(60)));
    let (_, done) = call(&app, "GET", &format!("/jobs/{}", job["job_id"].as_str().unwrap()), None).await;
    assert_eq!(done["status"], "done", "{done}");
    assert_eq!(done["result"]["training"][0]["n_triplets"], 1);

    // Clearing the last one leaves nothing to learn from.
    let ev = json!({"event_id": "x0", "image_id": items[0]["image_id"], "pathology": "P0",
        "verdict": "baseline-correct", "reviewer_id": "r", "timestamp": "2026-03-01T10:00:00Z"});
    call(&app, "POST", "/relabels", Some(ev)).await;
    let (status, err) = call(&app, "POST", "/retrain", Some(json!({"pathology": "P0"}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err["code"], "unprocessable");
}

#[tokio::test]
async fn retrain_job_lifecycle_and_latest_report() {
    let dir = tempfile::tempdir().unwrap();
    let svc = open(dir.path());
    let app = router(svc.clone());
    let (status, latest) = call(&app, "GET", "/reports/latest", None).await;
    assert_eq!(status, StatusCode::OK);
    assert!(latest["job_id"].is_null());
    assert!(latest["comparison"].is_null());
    assert_eq!(latest["report"]["rows"].as_array().unwrap().len(), 14);

    let body = json!({"pathology": "P0", "n_train": 10, "support_size": 8, "config": quick_config(3)});
    let (status, job) = call(&app, "POST", "/retrain", Some(body)).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    assert_eq!(job["request"]["mode"], "tfsl");
    let id = job["job_id"].as_str().unwrap().to_string();
    assert!(svc.wait_idle(Duration::from_secs(60)));
    let (_, done) = call(&app, "GET", &format!("/jobs/{id}"), None).await;
    assert_eq!(done["status"], "done");
    assert!(done["result"]["checkpoint_id"].as_str().unwrap().len() == 16);
    let (_, latest) = call(&app, "GET", "/reports/latest", None).await;
    assert_eq!(latest["job_id"], id.as_str());
    assert_eq!(latest["comparison"], done["result"]["comparison"]);
    assert_eq!(latest["comparison"]["rows"].as_array().unwrap().len(), 14);

    // A second job finishes later and takes over the latest report.
    let (_, job2) = call(&app, "POST", "/retrain", Some(json!({"pathology": "all", "n_train": 10, "support_size": 8, "config": quick_config(4)}))).await;
    assert_eq!(job2["request"]["mode"], "incremental");
    assert!(svc.wait_idle(Duration::from_secs(60)));
    let (_, latest) = call(&app, "GET", "/reports/latest", None).await;
    assert_eq!(latest["job_id"], job2["job_id"]);

    let (status, err) = call(&app, "GET", "/jobs/job-999999", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(err["code"], "not_found");
}

#[tokio::test]
async fn retrain_rejects_invalid_requests() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(open(dir.path()));
    let (status, _) =
        call(&app, "POST", "/retrain", Some(json!({"pathology": "P1", "support_size": 0, "config": quick_config(1)}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, err) =
        call(&app, "POST", "/retrain", Some(json!({"pathology": "P1", "config": {"epochs": 0}}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["code"], "invalid_config");
    let (status, _) = call(&app, "POST", "/retrain", Some(json!({"pathology": "Fracture"}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn identical_queued_job_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let svc = open(dir.path());
    let app = router(svc.clone());
    // Occupy the worker so the next two stay queued.
    let slow = json!({"pathology": "all", "mode": "tfsl", "support_size": 8, "config": {"epochs": 3, "seed": 1}});
    call(&app, "POST", "/retrain", Some(slow)).await;
    let body = json!({"pathology": "P0", "n_train": 5, "config": quick_config(9)});
    let (s1, _) = call(&app, "POST", "/retrain", Some(body.clone())).await;
    let (s2, err) = call(&app, "POST", "/retrain", Some(body)).await;
    assert_eq!(s1, StatusCode::ACCEPTED);
    assert_eq!(s2, StatusCode::CONFLICT, "{err}");
    assert!(svc.wait_idle(Duration::from_secs(120)));
}
