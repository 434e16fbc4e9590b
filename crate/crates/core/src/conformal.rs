//! Split conformal prediction with the LABEL (thresholded softmax) score.
//!
//! Score: `s = 1 - p_y`. Calibration picks the `ceil((N+1)(1-alpha))`-th
//! smallest calibration score as `q_hat` (or `+inf` when that index exceeds
//! `N`). A class belongs to the prediction set when `1 - p_k <= q_hat`.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::data::{Label, ProbabilityVector};
use crate::error::{Error, Result};

pub const SCORE_KIND: &str = "LABEL";

/// Calibrated threshold; `Infinite` admits every class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QHat {
    Finite(f64),
    Infinite,
}

impl QHat {
    pub fn value(self) -> f64 {
        match self {
            QHat::Finite(v) => v,
            QHat::Infinite => f64::INFINITY,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, QHat::Infinite)
    }
}

impl Serialize for QHat {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            QHat::Finite(v) => s.serialize_f64(*v),
            QHat::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for QHat {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(QHat::Finite(v)),
            Raw::Str(s) if s == "inf" => Ok(QHat::Infinite),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("invalid q_hat `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConformalCalibration {
    pub alpha: f64,
    pub n_cal: usize,
    pub q_hat: QHat,
    pub score_kind: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PredictionSet {
    /// Sorted ascending.
    pub members: Vec<usize>,
    pub threshold_used: f64,
}

impl PredictionSet {
    pub fn new(mut members: Vec<usize>, threshold_used: f64) -> Self {
        members.sort_unstable();
        members.dedup();
        PredictionSet {
            members,
            threshold_used,
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, label: Label) -> bool {
        self.members.binary_search(&label.0).is_ok()
    }

    /// Members form one contiguous run of class indices. Empty and singleton
    /// sets qualify.
    pub fn is_contiguous(&self) -> bool {
        self.members.windows(2).all(|w| w[1] == w[0] + 1)
    }
}

pub fn conformal_score(p: &ProbabilityVector, y: Label) -> Result<f64> {
    p.as_slice()
        .get(y.0)
        .map(|py| 1.0 - py)
        .ok_or_else(|| Error::InvalidData(format!("label {} out of range for {} classes", y.0, p.len())))
}

pub fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::arg("alpha", format!("must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

/// 1-based rank `ceil((n+1)(1-alpha))` of the calibration quantile.
///
/// The product is formed in floating point; a relative slack of 1e-12 absorbs
/// representation error such as `20 * 0.95 = 19.000000000000004`.
pub fn quantile_rank(n: usize, alpha: f64) -> usize {
    let x = (n as f64 + 1.0) * (1.0 - alpha);
    (x - 1e-12 * x.max(1.0)).ceil().max(1.0) as usize
}

pub fn calibrate_quantile(scores: &[f64], alpha: f64) -> Result<ConformalCalibration> {
    check_alpha(alpha)?;
    if scores.is_empty() {
        return Err(Error::InvalidData("no calibration scores".into()));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::NonFinite(format!("calibration score {s}")));
    }
    let n = scores.len();
    let k = quantile_rank(n, alpha);
    let q_hat = if k > n {
        QHat::Infinite
    } else {
        let mut sorted = scores.to_vec();
        sorted.sort_by(f64::total_cmp);
        QHat::Finite(sorted[k - 1])
    };
    Ok(ConformalCalibration {
        alpha,
        n_cal: n,
        q_hat,
        score_kind: SCORE_KIND.to_string(),
    })
}

/// Calibrate directly from calibration probabilities and labels.
pub fn calibrate(probs: &[ProbabilityVector], labels: &[Label], alpha: f64) -> Result<ConformalCalibration> {
    if probs.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} probability vectors vs {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let scores = probs
        .iter()
        .zip(labels)
        .map(|(p, y)| conformal_score(p, *y))
        .collect::<Result<Vec<_>>>()?;
    calibrate_quantile(&scores, alpha)
}

/// Classes whose score `1 - p_k` is within `q_hat`.
pub fn predict_set(p: &ProbabilityVector, cal: &ConformalCalibration) -> PredictionSet {
    let q = cal.q_hat.value();
    let members = p
        .as_slice()
        .iter()
        .enumerate()
        .filter(|(_, pk)| 1.0 - **pk <= q)
        .map(|(k, _)| k)
        .collect();
    PredictionSet::new(members, q)
}

/// Like [`predict_set`], but an empty set is replaced by the argmax class.
pub fn predict_set_nonempty(p: &ProbabilityVector, cal: &ConformalCalibration) -> PredictionSet {
    let set = predict_set(p, cal);
    if set.is_empty() {
        PredictionSet::new(vec![p.argmax()], set.threshold_used)
    } else {
        set
    }
}

/// Marginal coverage band `(1 - alpha, 1 - alpha + 1/(n+1))`.
pub fn coverage_bounds(alpha: f64, n_cal: usize) -> (f64, f64) {
    let lo = 1.0 - alpha;
    (lo, lo + 1.0 / (n_cal as f64 + 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(v: &[f64]) -> ProbabilityVector {
        ProbabilityVector::new(v.to_vec()).unwrap()
    }

    fn cal(q: QHat) -> ConformalCalibration {
        ConformalCalibration {
            alpha: 0.1,
            n_cal: 10,
            q_hat: q,
            score_kind: SCORE_KIND.into(),
        }
    }

    #[test]
    fn score_examples() {
        assert_eq!(conformal_score(&pv(&[1.0, 0.0, 0.0]), Label(0)).unwrap(), 0.0);
        let third = 1.0 / 3.0;
        let u = pv(&[third, third, third]);
        for y in 0..3 {
            assert!((conformal_score(&u, Label(y)).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        }
        assert!((conformal_score(&pv(&[0.2, 0.5, 0.3]), Label(2)).unwrap() - 0.7).abs() < 1e-15);
        assert!(conformal_score(&u, Label(3)).is_err());
    }

    #[test]
    fn rank_rule() {
        assert_eq!(quantile_rank(9, 0.1), 9);
        assert_eq!(quantile_rank(1, 0.1), 2);
        assert_eq!(quantile_rank(19, 0.05), 19);
        assert_eq!(quantile_rank(999, 0.05), 950);
        assert_eq!(quantile_rank(99, 0.2), 80);
    }

    #[test]
    fn nine_scores_alpha_point_one_takes_max() {
        let scores = [0.4, 0.1, 0.9, 0.3, 0.35, 0.05, 0.6, 0.2, 0.8];
        let c = calibrate_quantile(&scores, 0.1).unwrap();
        assert_eq!(c.q_hat, QHat::Finite(0.9));
        assert_eq!(c.n_cal, 9);
    }

    #[test]
    fn single_score_gives_infinite_threshold() {
        let c = calibrate_quantile(&[0.3], 0.1).unwrap();
        assert!(c.q_hat.is_infinite());
        assert_eq!(predict_set(&pv(&[0.98, 0.01, 0.01]), &c).members, vec![0, 1, 2]);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(calibrate_quantile(&[], 0.1).is_err());
        assert!(calibrate_quantile(&[0.1], 0.0).is_err());
        assert!(calibrate_quantile(&[0.1], 1.0).is_err());
        assert!(calibrate_quantile(&[f64::NAN], 0.1).is_err());
    }

    #[test]
    fn set_examples() {
        assert_eq!(
            predict_set(&pv(&[0.6, 0.3, 0.1]), &cal(QHat::Finite(0.5))).members,
            vec![0]
        );
        assert_eq!(
            predict_set(&pv(&[0.6, 0.3, 0.1]), &cal(QHat::Infinite)).members,
            vec![0, 1, 2]
        );
        assert_eq!(
            predict_set(&pv(&[0.35, 0.35, 0.30]), &cal(QHat::Finite(0.7))).members,
            vec![0, 1, 2]
        );
    }

    #[test]
    fn threshold_is_inclusive() {
        // 1 - 0.75 is exactly 0.25.
        assert_eq!(
            predict_set(&pv(&[0.75, 0.25]), &cal(QHat::Finite(0.25))).members,
            vec![0]
        );
    }

    #[test]
    fn force_nonempty_adds_argmax() {
        let c = cal(QHat::Finite(0.1));
        let p = pv(&[0.5, 0.3, 0.2]);
        assert!(predict_set(&p, &c).is_empty());
        assert_eq!(predict_set_nonempty(&p, &c).members, vec![0]);
    }

    #[test]
    fn bounds_examples() {
        assert_eq!(coverage_bounds(0.1, 9), (0.9, 1.0));
        let (lo, hi) = coverage_bounds(0.05, 999);
        assert_eq!(lo, 0.95);
        assert!((hi - 0.951).abs() < 1e-12);
        let (lo, hi) = coverage_bounds(0.1, 10_000_000);
        assert!((hi - lo) < 1e-6 && (lo - 0.9).abs() < 1e-15);
    }

    #[test]
    fn q_hat_json_sentinel() {
        let c = cal(QHat::Infinite);
        let s = serde_json::to_string(&c).unwrap();
        assert!(s.contains("\"q_hat\":\"inf\""));
        let back: ConformalCalibration = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
        let f = cal(QHat::Finite(0.125));
        let back: ConformalCalibration = serde_json::from_str(&serde_json::to_string(&f).unwrap()).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn contiguity() {
        assert!(PredictionSet::new(vec![1, 2, 3], 0.0).is_contiguous());
        assert!(!PredictionSet::new(vec![0, 2], 0.0).is_contiguous());
        assert!(PredictionSet::new(vec![], 0.0).is_contiguous());
        assert!(PredictionSet::new(vec![2], 0.0).is_contiguous());
    }
}
