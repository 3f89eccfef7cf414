mod common;

use std::collections::BTreeSet;

use common::*;
use fsl_core::eval::{partition_confusion, Cell, Outcome};
use fsl_core::ingest::ImageStore;
use fsl_core::model::{embed_image, swap_embedding_head};
use fsl_core::trainer::{compute_prototypes, reclassify_failures, reclassify_with, PrototypeSet};
use fsl_core::Error;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fixture(n_per_cell: usize) -> (ImageStore, fsl_core::eval::ConfusionPartition, Vec<(String, Cell)>) {
    let mut cells = Vec::new();
    let mut recs = Vec::new();
    for (ci, c) in CELLS.iter().enumerate() {
        for k in 0..n_per_cell {
            let id = format!("{c:?}-{k:02}");
            recs.push(record(&id, (ci * 100 + k) as u64, 16));
            cells.push((id, *c));
        }
    }
    let part = partition_confusion(&records_with_cells(p(0), &cells)).unwrap();
    (ImageStore::new(recs).unwrap(), part, cells)
}

#[test]
fn prototype_is_arithmetic_mean_of_support() {
    let (store, part, _) = fixture(6);
    let model = swap_embedding_head(&small_classifier(3, 16), 4);
    let protos = compute_prototypes(&model, &part, p(0), &store, 100, 0).unwrap();
    assert_eq!(protos.tp_support.len(), 6);
    for (support, proto) in [(&protos.tp_support, &protos.tp_prototype), (&protos.tn_support, &protos.tn_prototype)] {
        let embs: Vec<Vec<f32>> = support.iter().map(|id| embed_image(&model, store.pixels(id).unwrap()).unwrap()).collect();
        for d in 0..proto.len() {
            let mean = embs.iter().map(|e| e[d] as f64).sum::<f64>() / embs.len() as f64;
            assert!((mean - proto[d]).abs() < 1e-9 * (1.0 + mean.abs()));
        }
    }
}

#[test]
fn support_is_subsampled_and_seeded() {
    let (store, part, _) = fixture(10);
    let model = swap_embedding_head(&small_classifier(3, 16), 4);
    let a = compute_prototypes(&model, &part, p(0), &store, 4, 9).unwrap();
    let b = compute_prototypes(&model, &part, p(0), &store, 4, 9).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.tp_support.len(), 4);
    assert!(a.tp_support.iter().all(|id| part.pathology(p(0)).tp.contains(id)));
    assert!(a.tn_support.iter().all(|id| part.pathology(p(0)).tn.contains(id)));
}

#[test]
fn single_image_pool_gives_its_embedding() {
    let (store, part, _) = fixture(1);
    let model = swap_embedding_head(&small_classifier(5, 16), 6);
    let protos = compute_prototypes(&model, &part, p(0), &store, 64, 0).unwrap();
    let e = embed_image(&model, store.pixels("TP-00").unwrap()).unwrap();
    assert_eq!(protos.tp_prototype, e.iter().map(|&v| v as f64).collect::<Vec<_>>());
}

#[test]
fn empty_pool_is_an_error() {
    let cells = vec![("a".to_string(), Cell::FN), ("b".to_string(), Cell::TN)];
    let part = partition_confusion(&records_with_cells(p(0), &cells)).unwrap();
    let store = ImageStore::new(vec![record("a", 1, 16), record("b", 2, 16)]).unwrap();
    let model = swap_embedding_head(&small_classifier(5, 16), 6);
    let err = compute_prototypes(&model, &part, p(0), &store, 8, 0).unwrap_err();
    assert!(matches!(err, Error::UnsatisfiableTriplet { pool: "TP", .. }));
}

#[test]
fn anchor_on_tp_prototype_is_positive() {
    let (store, part, _) = fixture(1);
    let model = swap_embedding_head(&small_classifier(5, 16), 6);
    let protos = compute_prototypes(&model, &part, p(0), &store, 64, 0).unwrap();
    let val: BTreeSet<String> = ["FN-00".to_string()].into();
    let mut fake = protos.clone();
    fake.tp_prototype = embed_image(&model, store.pixels("FN-00").unwrap()).unwrap().iter().map(|&v| v as f64).collect();
    let out = reclassify_failures(&model, &part, p(0), &fake, &val, &BTreeSet::new(), &store).unwrap();
    assert_eq!(out.cell_of(p(0), "FN-00"), Some(Cell::TP));
    let wrong = PrototypeSet { pathology: p(1), ..protos };
    assert!(reclassify_failures(&model, &part, p(0), &wrong, &val, &BTreeSet::new(), &store).is_err());
}

#[test]
fn reclassification_matches_brute_force_recount() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for trial in 0..200 {
        let n = rng.random_range(4..60);
        let cells: Vec<(String, Cell)> =
            (0..n).map(|i| (format!("img{trial}-{i:03}"), CELLS[rng.random_range(0..4)])).collect();
        let part = partition_confusion(&records_with_cells(p(0), &cells)).unwrap();
        let mut failed: Vec<String> = part.failed(p(0)).into_iter().collect();
        failed.shuffle(&mut rng);
        let n_train = rng.random_range(0..=failed.len());
        let train: BTreeSet<String> = failed[..n_train].iter().cloned().collect();
        let val: BTreeSet<String> = failed[n_train..].iter().cloned().collect();
        let decisions: std::collections::HashMap<String, bool> = val.iter().map(|id| (id.clone(), rng.random())).collect();

        let out = reclassify_with(&part, p(0), &val, &train, |id| Ok(Outcome::from_bool(decisions[id]))).unwrap();

        let (mut tp, mut fp, mut tn, mut fn_) = (0u64, 0u64, 0u64, 0u64);
        for (id, c) in &cells {
            if train.contains(id) {
                continue;
            }
            let truth_pos = matches!(c, Cell::TP | Cell::FN);
            let dec_pos = match decisions.get(id) {
                Some(&d) => d,
                None => matches!(c, Cell::TP | Cell::FP),
            };
            match (dec_pos, truth_pos) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, false) => tn += 1,
                (false, true) => fn_ += 1,
            }
        }
        let got = out.counts(p(0));
        assert_eq!((got.tp, got.fp, got.tn, got.fn_), (tp, fp, tn, fn_), "trial {trial}");
    }
}

#[test]
fn no_anchors_leaves_partition_unchanged() {
    let (_, part, _) = fixture(3);
    let out = reclassify_with(&part, p(0), &BTreeSet::new(), &BTreeSet::new(), |_| unreachable!()).unwrap();
    assert_eq!(out, part);
}

#[test]
fn non_failure_anchor_is_rejected() {
    let (_, part, _) = fixture(3);
    let val: BTreeSet<String> = ["TP-00".to_string()].into();
    let err = reclassify_with(&part, p(0), &val, &BTreeSet::new(), |_| Ok(Outcome::Positive)).unwrap_err();
    assert!(matches!(err, Error::NotAFailure { .. }));
}
