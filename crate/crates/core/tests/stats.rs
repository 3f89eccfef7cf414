mod common;

use common::p;
use fsl_core::eval::{compute_npv, compute_ppv, Counts, MetricsReport, PathologyMetrics, Provenance};
use fsl_core::stats::{compare_reports, inc_beta, paired_t_test, student_t_cdf, TestOutcome};
use fsl_core::{Error, PathologyId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

#[test]
fn t_cdf_matches_statrs() {
    for df in [1.0, 2.0, 3.0, 5.0, 13.0, 30.0, 120.0] {
        let reference = StudentsT::new(0.0, 1.0, df).unwrap();
        for i in -60..=60 {
            let t = i as f64 * 0.2;
            let ours = student_t_cdf(t, df);
            let theirs = reference.cdf(t);
            assert!((ours - theirs).abs() < 1e-10, "df={df} t={t}: {ours} vs {theirs}");
        }
    }
}

#[test]
fn df2_closed_form_on_grid() {
    for i in -200..=200 {
        let t = i as f64 * 0.05;
        let closed = 0.5 + t / (2.0 * (t * t + 2.0).sqrt());
        assert!((student_t_cdf(t, 2.0) - closed).abs() < 1e-10);
    }
}

#[test]
fn incomplete_beta_symmetry() {
    for &(a, b) in &[(0.5, 0.5), (2.0, 3.0), (6.5, 0.5), (10.0, 1.0)] {
        for i in 1..20 {
            let x = i as f64 / 20.0;
            assert!((inc_beta(a, b, x) + inc_beta(b, a, 1.0 - x) - 1.0).abs() < 1e-12);
        }
    }
    // I_x(a, 1) = x^a
    assert!((inc_beta(3.0, 1.0, 0.4) - 0.4f64.powi(3)).abs() < 1e-14);
}

#[test]
fn p_value_is_a_probability_and_decreases_in_abs_t() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..300 {
        let n = rng.random_range(2..20);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-50.0..50.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-50.0..50.0)).collect();
        let r = paired_t_test(&a, &b).unwrap();
        assert!((0.0..=1.0).contains(&r.p_value));
        assert_eq!(r.degrees_of_freedom, n - 1);
        let flipped = paired_t_test(&b, &a).unwrap();
        assert!((flipped.t_statistic + r.t_statistic).abs() < 1e-12);
        assert!((flipped.p_value - r.p_value).abs() < 1e-12);
        let shift: f64 = rng.random_range(-10.0..10.0);
        let sa: Vec<f64> = a.iter().map(|v| v + shift).collect();
        let sb: Vec<f64> = b.iter().map(|v| v + shift).collect();
        let shifted = paired_t_test(&sa, &sb).unwrap();
        assert!((shifted.t_statistic - r.t_statistic).abs() < 1e-9 * (1.0 + r.t_statistic.abs()));
    }
    for df in [1usize, 4, 13] {
        let mut last = 1.0;
        for i in 0..100 {
            let t = i as f64 * 0.1;
            let p = 2.0 * (1.0 - student_t_cdf(t, df as f64));
            assert!(p <= last + 1e-15);
            last = p;
        }
    }
}

#[test]
fn two_sided_p_agrees_with_statrs() {
    let r = paired_t_test(&[5.0, 7.0, 6.5, 9.0, 4.0], &[4.0, 6.0, 6.0, 7.5, 4.5]).unwrap();
    let dist = StudentsT::new(0.0, 1.0, r.degrees_of_freedom as f64).unwrap();
    let expected = 2.0 * (1.0 - dist.cdf(r.t_statistic.abs()));
    assert!((r.p_value - expected).abs() < 1e-10);
}

fn metric_row(p: PathologyId, c: Counts) -> PathologyMetrics {
    PathologyMetrics { pathology: p, counts: c, ppv: compute_ppv(&c), npv: compute_npv(&c) }
}

fn random_report(rng: &mut ChaCha8Rng, n: usize, split: &str) -> MetricsReport {
    let rows = (0..n)
        .map(|i| {
            let mut g = || if rng.random_bool(0.1) { 0 } else { rng.random_range(0..200u64) };
            metric_row(p(i), Counts { tp: g(), fp: g(), tn: g(), fn_: g() })
        })
        .collect();
    MetricsReport {
        rows,
        provenance: Provenance { checkpoint_id: "c".into(), split_id: split.into(), timestamp: "2026-01-01T00:00:00Z".into() },
    }
}

#[test]
fn deltas_equal_elementwise_subtraction() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let before = random_report(&mut rng, 14, "s");
        let after = random_report(&mut rng, 14, "s");
        let doc = compare_reports(&before, &after).unwrap();
        let mut excluded_npv = Vec::new();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for (i, row) in doc.rows.iter().enumerate() {
            let (x, y) = (&before.rows[i], &after.rows[i]);
            let expect_ppv = if x.ppv.undefined || y.ppv.undefined { None } else { Some(y.ppv.value - x.ppv.value) };
            assert_eq!(row.ppv_delta, expect_ppv);
            if x.npv.undefined || y.npv.undefined {
                assert_eq!(row.npv_delta, None);
                excluded_npv.push(x.pathology);
            } else {
                assert_eq!(row.npv_delta, Some(y.npv.value - x.npv.value));
                a.push(y.npv.value);
                b.push(x.npv.value);
            }
        }
        assert_eq!(doc.npv.excluded, excluded_npv);
        match (&doc.npv.test, paired_t_test(&a, &b)) {
            (TestOutcome::Result(got), Ok(want)) => assert_eq!(*got, want),
            (TestOutcome::Error { .. }, Err(_)) => {}
            other => panic!("test outcome mismatch: {other:?}"),
        }
    }
}

#[test]
fn identical_reports_compare_flat() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let r = random_report(&mut rng, 14, "s");
    let doc = compare_reports(&r, &r).unwrap();
    assert!(doc.rows.iter().all(|row| row.ppv_delta.unwrap_or(0.0) == 0.0 && row.npv_delta.unwrap_or(0.0) == 0.0));
    let t = doc.npv.test.result().unwrap();
    assert_eq!((t.t_statistic, t.p_value, t.degenerate), (0.0, 1.0, true));
}

#[test]
fn single_pathology_keeps_deltas_but_not_the_test() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut before = random_report(&mut rng, 1, "s");
    let mut after = random_report(&mut rng, 1, "s");
    before.rows[0] = metric_row(p(0), Counts { tp: 5, fp: 5, tn: 5, fn_: 5 });
    after.rows[0] = metric_row(p(0), Counts { tp: 9, fp: 1, tn: 8, fn_: 2 });
    let doc = compare_reports(&before, &after).unwrap();
    assert_eq!(doc.rows[0].ppv_delta, Some(40.0));
    assert_eq!(doc.rows[0].npv_delta, Some(30.0));
    assert!(matches!(doc.ppv.test, TestOutcome::Error { .. }));
}

#[test]
fn different_splits_are_incomparable() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = random_report(&mut rng, 14, "s1");
    let b = random_report(&mut rng, 14, "s2");
    assert!(matches!(compare_reports(&a, &b), Err(Error::Incomparable(_))));
}

#[test]
fn comparison_json_has_no_timestamps() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a = random_report(&mut rng, 14, "s");
    let mut b = random_report(&mut rng, 14, "s");
    let doc1 = serde_json::to_vec(&compare_reports(&a, &b).unwrap()).unwrap();
    b.provenance.timestamp = "2030-06-06T06:06:06Z".into();
    let doc2 = serde_json::to_vec(&compare_reports(&a, &b).unwrap()).unwrap();
    assert_eq!(doc1, doc2);
}
