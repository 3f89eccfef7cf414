//! Paired t-test and before/after report comparison.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{Metric, MetricsReport};
use crate::pathology::PathologyId;

const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// ln Γ(x) for x > 0 (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    let t = x + 7.5;
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    let mut c = 1.0;
    let mut d = 1.0 - (a + b) * x / (a + 1.0);
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=500 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let num = m * (b - m) * x / ((a + m2 - 1.0) * (a + m2));
        d = 1.0 + num * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + num / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let num = -(a + m) * (a + b + m) * x / ((a + m2) * (a + m2 + 1.0));
        d = 1.0 + num * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + num / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta I_x(a, b), evaluated by Lentz's continued fraction.
pub fn inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// CDF of Student's t with `df` degrees of freedom.
pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return if t > 0.0 { 1.0 } else { 0.0 };
    }
    let tail = 0.5 * inc_beta(df / 2.0, 0.5, df / (df + t * t));
    if t > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t_statistic: f64,
    pub degrees_of_freedom: usize,
    /// Two-sided.
    pub p_value: f64,
    pub n_pairs: usize,
    pub mean_difference: f64,
    /// Differences had zero spread, so t is not a ratio of finite values.
    pub degenerate: bool,
}

/// Dependent-samples t-test on `a − b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTestResult> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!("paired vectors of length {} and {}", a.len(), b.len())));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("paired t-test needs at least 2 pairs, got {n}")));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("t-test input".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let nf = n as f64;
    let mean = d.iter().sum::<f64>() / nf;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let sd = var.sqrt();
    let df = n - 1;
    // Differences that agree to rounding noise count as constant.
    let scale = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if sd <= 1e-12 * scale.max(f64::MIN_POSITIVE) || sd == 0.0 {
        let (t, p) = if mean == 0.0 || scale == 0.0 {
            (0.0, 1.0)
        } else {
            (f64::INFINITY.copysign(mean), 0.0)
        };
        return Ok(TTestResult { t_statistic: t, degrees_of_freedom: df, p_value: p, n_pairs: n, mean_difference: mean, degenerate: true });
    }
    let t = mean / (sd / nf.sqrt());
    let p = inc_beta(df as f64 / 2.0, 0.5, df as f64 / (df as f64 + t * t)).clamp(0.0, 1.0);
    Ok(TTestResult { t_statistic: t, degrees_of_freedom: df, p_value: p, n_pairs: n, mean_difference: mean, degenerate: false })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathologyDelta {
    pub pathology: PathologyId,
    pub ppv_before: Metric,
    pub ppv_after: Metric,
    pub npv_before: Metric,
    pub npv_after: Metric,
    /// `None` when either side is undefined.
    pub ppv_delta: Option<f64>,
    pub npv_delta: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestOutcome {
    Result(TTestResult),
    Error { code: String, message: String },
}

impl TestOutcome {
    pub fn result(&self) -> Option<&TTestResult> {
        match self {
            TestOutcome::Result(r) => Some(r),
            TestOutcome::Error { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricTest {
    /// Pathologies dropped because a side was undefined.
    pub excluded: Vec<PathologyId>,
    pub test: TestOutcome,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonDocument {
    pub split_id: String,
    pub before_checkpoint: String,
    pub after_checkpoint: String,
    pub rows: Vec<PathologyDelta>,
    pub ppv: MetricTest,
    pub npv: MetricTest,
}

impl ComparisonDocument {
    pub fn row(&self, p: PathologyId) -> Option<&PathologyDelta> {
        self.rows.iter().find(|r| r.pathology == p)
    }

    pub fn render_table(&self) -> String {
        use std::fmt::Write;
        let m = |v: &Metric| if v.undefined { "-".to_string() } else { format!("{:.2}", v.value) };
        let d = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:+.2}"));
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<28} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
            "Pathology", "PPV0", "PPV1", "dPPV", "NPV0", "NPV1", "dNPV"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<28} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
                r.pathology.name(),
                m(&r.ppv_before),
                m(&r.ppv_after),
                d(r.ppv_delta),
                m(&r.npv_before),
                m(&r.npv_after),
                d(r.npv_delta)
            );
        }
        for (name, mt) in [("PPV", &self.ppv), ("NPV", &self.npv)] {
            match &mt.test {
                TestOutcome::Result(t) => {
                    let _ = writeln!(s, "{name}: t = {:.4}, df = {}, p = {:.4}", t.t_statistic, t.degrees_of_freedom, t.p_value);
                }
                TestOutcome::Error { message, .. } => {
                    let _ = writeln!(s, "{name}: no test ({message})");
                }
            }
        }
        s
    }
}

fn metric_test(pairs: impl Iterator<Item = (PathologyId, Metric, Metric)>) -> MetricTest {
    let mut excluded = Vec::new();
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for (p, before, after) in pairs {
        if before.undefined || after.undefined {
            excluded.push(p);
        } else {
            a.push(after.value);
            b.push(before.value);
        }
    }
    let test = match paired_t_test(&a, &b) {
        Ok(r) => TestOutcome::Result(r),
        Err(e) => TestOutcome::Error { code: e.code().to_string(), message: e.to_string() },
    };
    MetricTest { excluded, test }
}

/// Per-pathology deltas (after − before) and paired tests over the rows both
/// reports share.
pub fn compare_reports(before: &MetricsReport, after: &MetricsReport) -> Result<ComparisonDocument> {
    if before.provenance.split_id != after.provenance.split_id {
        return Err(Error::Incomparable(format!(
            "reports come from different splits ({} vs {})",
            before.provenance.split_id, after.provenance.split_id
        )));
    }
    let before_set: Vec<PathologyId> = before.rows.iter().map(|r| r.pathology).collect();
    let after_set: Vec<PathologyId> = after.rows.iter().map(|r| r.pathology).collect();
    if before_set != after_set {
        return Err(Error::Incomparable("reports cover different pathologies".into()));
    }
    let delta = |b: &Metric, a: &Metric| (!b.undefined && !a.undefined).then_some(a.value - b.value);
    let rows: Vec<PathologyDelta> = before
        .rows
        .iter()
        .zip(&after.rows)
        .map(|(b, a)| PathologyDelta {
            pathology: b.pathology,
            ppv_before: b.ppv,
            ppv_after: a.ppv,
            npv_before: b.npv,
            npv_after: a.npv,
            ppv_delta: delta(&b.ppv, &a.ppv),
            npv_delta: delta(&b.npv, &a.npv),
        })
        .collect();
    let ppv = metric_test(rows.iter().map(|r| (r.pathology, r.ppv_before, r.ppv_after)));
    let npv = metric_test(rows.iter().map(|r| (r.pathology, r.npv_before, r.npv_after)));
    Ok(ComparisonDocument {
        split_id: before.provenance.split_id.clone(),
        before_checkpoint: before.provenance.checkpoint_id.clone(),
        after_checkpoint: after.provenance.checkpoint_id.clone(),
        rows,
        ppv,
        npv,
    })
}
