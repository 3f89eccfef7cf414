//! Ranking losses over Euclidean embedding distances, with analytic
//! gradients for the anchor/TP/TN embeddings.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    MarginRanking,
    TripletMargin,
}

pub fn euclidean_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!("vectors of length {} and {}", a.len(), b.len())));
    }
    let mut sum = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        sum += d * d;
    }
    if !sum.is_finite() {
        return Err(Error::NonFinite("distance input".into()));
    }
    Ok(sum.sqrt())
}

/// `max(0, -y*(x1-x2) + margin)` with `y ∈ {-1, +1}`.
pub fn margin_ranking_loss(x1: f64, x2: f64, y: i8, margin: f64) -> Result<f64> {
    if y != 1 && y != -1 {
        return Err(Error::InvalidArgument(format!("ranking label must be -1 or +1, got {y}")));
    }
    let y = y as f64;
    Ok((-y * (x1 - x2) + margin).max(0.0))
}

/// `max(0, d_ap - d_an + margin)`.
pub fn triplet_margin_loss(d_ap: f64, d_an: f64, margin: f64) -> f64 {
    (d_ap - d_an + margin).max(0.0)
}

/// Loss value and gradients for one triplet.
#[derive(Clone, Debug, PartialEq)]
pub struct TripletLossEval {
    pub loss: f64,
    /// dist(anchor, tp)
    pub x1: f64,
    /// dist(anchor, tn)
    pub x2: f64,
    pub grad_anchor: Vec<f64>,
    pub grad_tp: Vec<f64>,
    pub grad_tn: Vec<f64>,
}

/// Evaluate the chosen loss on `x1 = ‖a − tp‖`, `x2 = ‖a − tn‖`.
///
/// For the triplet-margin form the "positive" is the reference the anchor
/// should move towards: TP for a false negative (`y = -1`), TN for a false
/// positive (`y = +1`). Gradients are zero where the hinge is inactive and
/// the distance term is dropped when a distance is exactly zero.
pub fn triplet_objective(
    kind: LossKind,
    anchor: &[f64],
    tp: &[f64],
    tn: &[f64],
    y: i8,
    margin: f64,
) -> Result<TripletLossEval> {
    let x1 = euclidean_distance(anchor, tp)?;
    let x2 = euclidean_distance(anchor, tn)?;
    let loss = match kind {
        LossKind::MarginRanking => margin_ranking_loss(x1, x2, y, margin)?,
        LossKind::TripletMargin => {
            let (d_ap, d_an) = match y {
                -1 => (x1, x2),
                1 => (x2, x1),
                _ => return Err(Error::InvalidArgument(format!("ranking label must be -1 or +1, got {y}"))),
            };
            triplet_margin_loss(d_ap, d_an, margin)
        }
    };

    let n = anchor.len();
    let (mut ga, mut gp, mut gn) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    if loss > 0.0 {
        // Both forms reduce to -y·x1 + y·x2 + margin on the active side.
        let yf = y as f64;
        let (dl_dx1, dl_dx2) = (-yf, yf);
        if x1 > 0.0 {
            for i in 0..n {
                let u = (anchor[i] - tp[i]) / x1;
                ga[i] += dl_dx1 * u;
                gp[i] -= dl_dx1 * u;
            }
        }
        if x2 > 0.0 {
            for i in 0..n {
                let u = (anchor[i] - tn[i]) / x2;
                ga[i] += dl_dx2 * u;
                gn[i] -= dl_dx2 * u;
            }
        }
    }
    Ok(TripletLossEval { loss, x1, x2, grad_anchor: ga, grad_tp: gp, grad_tn: gn })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn distance_examples() {
        let a = [1.5, -2.0, 0.25];
        assert_eq!(euclidean_distance(&a, &a).unwrap(), 0.0);
        let mut v = vec![0.0; 128];
        v[0] = 3.0;
        v[1] = 4.0;
        assert_eq!(euclidean_distance(&v, &[0.0; 128]).unwrap(), 5.0);
        assert!(euclidean_distance(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn margin_ranking_examples() {
        assert_eq!(margin_ranking_loss(0.5, 1.5, -1, 0.0).unwrap(), 0.0);
        assert_eq!(margin_ranking_loss(2.0, 1.0, -1, 0.5).unwrap(), 1.5);
        for y in [-1, 1] {
            assert_eq!(margin_ranking_loss(0.7, 0.7, y, 1.0).unwrap(), 1.0);
        }
        assert!(margin_ranking_loss(1.0, 1.0, 0, 1.0).is_err());
        assert!(margin_ranking_loss(1.0, 1.0, 2, 1.0).is_err());
    }

    #[test]
    fn triplet_margin_examples() {
        assert_eq!(triplet_margin_loss(0.0, 2.0, 1.0), 0.0);
        assert_eq!(triplet_margin_loss(2.0, 0.0, 1.0), 3.0);
        assert_eq!(triplet_margin_loss(1.25, 1.25, 0.4), 0.4);
    }

    #[test]
    fn kinds_agree_on_reference_mapping() {
        let a = [0.0, 1.0];
        let tp = [0.0, 3.0];
        let tn = [1.0, 1.0];
        for y in [-1i8, 1] {
            let mr = triplet_objective(LossKind::MarginRanking, &a, &tp, &tn, y, 0.5).unwrap();
            let tm = triplet_objective(LossKind::TripletMargin, &a, &tp, &tn, y, 0.5).unwrap();
            assert_eq!(mr.loss, tm.loss);
            assert_eq!(mr.grad_anchor, tm.grad_anchor);
        }
    }

    proptest! {
        #[test]
        fn hinge_zero_set(x1 in 0.0f64..5.0, x2 in 0.0f64..5.0, pos in any::<bool>(), margin in 0.0f64..2.0) {
            let y: i8 = if pos { 1 } else { -1 };
            let l = margin_ranking_loss(x1, x2, y, margin).unwrap();
            prop_assert!(l >= 0.0);
            prop_assert_eq!(l == 0.0, (y as f64) * (x1 - x2) >= margin);
        }

        #[test]
        fn distance_symmetric(a in proptest::collection::vec(-10.0f64..10.0, 8), b in proptest::collection::vec(-10.0f64..10.0, 8)) {
            let d = euclidean_distance(&a, &b).unwrap();
            prop_assert_eq!(d, euclidean_distance(&b, &a).unwrap());
            prop_assert_eq!(d == 0.0, a == b);
        }
    }
}
