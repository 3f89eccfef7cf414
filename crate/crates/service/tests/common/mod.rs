#![allow(dead_code)]

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use fsl_core::baseline::{weakened_baseline, PretrainConfig};
use fsl_core::eval::{build_report, partition_confusion, run_inference, Provenance};
use fsl_core::ingest::{generate_synthetic_dataset, split_dataset, split_id, ImageStore, PreprocessConfig, SyntheticSpec};
use fsl_core::model::{checkpoint_id, Checkpoint, Model};
use fsl_service::{LoopService, Workspace};
use serde_json::Value;
use tower::ServiceExt;

/// 16×16 synthetic images and a briefly pretrained, weakened classifier.
pub fn workspace() -> Workspace {
    let spec = SyntheticSpec { image_size: 16, seed: 5, ..Default::default() };
    let recs = generate_synthetic_dataset(&spec, 160).unwrap();
    let (train, eval) = split_dataset(recs, (0.5, 0.5), 5).unwrap();
    let cfg = PretrainConfig { epochs: 3, seed: 5, ..Default::default() };
    let (clf, _) = weakened_baseline(&train, PreprocessConfig::identity(16), &cfg, 0.5).unwrap();
    let ckpt = checkpoint_id(&Checkpoint::new(Model::Classifier(clf.clone()), 5)).unwrap();
    let inference = run_inference(&clf, &eval, 0.5).unwrap();
    let sid = split_id(&eval);
    let report = build_report(
        &partition_confusion(&inference).unwrap(),
        Provenance { checkpoint_id: ckpt.clone(), split_id: sid.clone(), timestamp: "2026-01-01T00:00:00Z".into() },
    );
    Workspace::new(clf, ckpt, ImageStore::new(eval).unwrap(), inference, report, sid).unwrap()
}

pub fn open(dir: &std::path::Path) -> Arc<LoopService> {
    LoopService::open(workspace(), dir).unwrap()
}

/// Cheap job settings so tests spend little time training.
pub fn quick_config(seed: u64) -> Value {
    serde_json::json!({ "epochs": 1, "batch_size": 4, "seed": seed })
}

pub async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(serde_json::to_vec(&b).unwrap())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap_or(Value::Null) };
    (status, value)
}
