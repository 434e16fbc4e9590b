//! Evaluation metrics and the repeated calibration/evaluation trial protocol.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conformal::{calibrate, check_alpha, predict_set, predict_set_nonempty, PredictionSet, QHat};
use crate::data::{Label, ProbabilityVector};
use crate::error::{Error, Result};
use crate::rng::RngSeed;

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a == 0 {
        return Err(Error::InvalidData("cannot evaluate an empty set of predictions".into()));
    }
    if a != b {
        return Err(Error::DimensionMismatch(format!("{a} predictions vs {b} labels")));
    }
    Ok(())
}

/// Mean over classes present in `truth` of the per-class hit rate.
fn class_balanced(truth: &[Label], k: usize, hit: impl Fn(usize) -> bool) -> Result<f64> {
    let mut total = vec![0usize; k];
    let mut hits = vec![0usize; k];
    for (i, y) in truth.iter().enumerate() {
        let c = *total
            .get(y.0)
            .ok_or_else(|| Error::InvalidData(format!("label {} out of range for {k} classes", y.0)))?;
        total[y.0] = c + 1;
        if hit(i) {
            hits[y.0] += 1;
        }
    }
    let present: Vec<f64> = total
        .iter()
        .zip(&hits)
        .filter(|(t, _)| **t > 0)
        .map(|(t, h)| *h as f64 / *t as f64)
        .collect();
    Ok(present.iter().sum::<f64>() / present.len() as f64)
}

pub fn balanced_accuracy(predicted: &[Label], truth: &[Label], k: usize) -> Result<f64> {
    check_lengths(predicted.len(), truth.len())?;
    class_balanced(truth, k, |i| predicted[i] == truth[i])
}

pub fn balanced_coverage(sets: &[PredictionSet], truth: &[Label], k: usize) -> Result<f64> {
    check_lengths(sets.len(), truth.len())?;
    class_balanced(truth, k, |i| sets[i].contains(truth[i]))
}

/// Fraction of sets containing the true label.
pub fn coverage(sets: &[PredictionSet], truth: &[Label]) -> Result<f64> {
    check_lengths(sets.len(), truth.len())?;
    let hits = sets.iter().zip(truth).filter(|(s, y)| s.contains(**y)).count();
    Ok(hits as f64 / sets.len() as f64)
}

pub fn mean_set_size(sets: &[PredictionSet]) -> Result<f64> {
    if sets.is_empty() {
        return Err(Error::InvalidData("cannot average over zero prediction sets".into()));
    }
    Ok(sets.iter().map(PredictionSet::len).sum::<usize>() as f64 / sets.len() as f64)
}

/// Fraction of sets whose members are one contiguous run of classes. An
/// empty list is vacuously ordinal.
pub fn ordinality_fraction(sets: &[PredictionSet]) -> f64 {
    if sets.is_empty() {
        return 1.0;
    }
    sets.iter().filter(|s| s.is_contiguous()).count() as f64 / sets.len() as f64
}

/// Sample median; the mean of the two middle values for even lengths.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Resample {
    /// Only the calibration subset is redrawn; the evaluation set is fixed.
    #[serde(rename = "cal")]
    Cal,
    /// The pooled held-out data is re-split every trial.
    #[serde(rename = "cal+test")]
    CalTest,
}

impl std::str::FromStr for Resample {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cal" => Ok(Resample::Cal),
            "cal+test" => Ok(Resample::CalTest),
            other => Err(Error::arg(
                "resample",
                format!("expected `cal` or `cal+test`, got `{other}`"),
            )),
        }
    }
}

impl Resample {
    pub fn as_str(self) -> &'static str {
        match self {
            Resample::Cal => "cal",
            Resample::CalTest => "cal+test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub alpha: f64,
    pub n_trials: usize,
    pub cal_fraction: f64,
    pub seed: RngSeed,
    pub force_nonempty: bool,
}

impl TrialConfig {
    pub fn new(alpha: f64, n_trials: usize, seed: RngSeed) -> Self {
        TrialConfig {
            alpha,
            n_trials,
            cal_fraction: 0.5,
            seed,
            force_nonempty: false,
        }
    }

    fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        if !(self.cal_fraction > 0.0 && self.cal_fraction < 1.0) {
            return Err(Error::arg(
                "cal-fraction",
                format!("must lie in (0, 1), got {}", self.cal_fraction),
            ));
        }
        if self.n_trials < 1 {
            return Err(Error::arg("trials", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub bcov: f64,
    pub coverage: f64,
    pub mean_set_size: f64,
    pub n_cal: usize,
    pub n_eval: usize,
    pub q_hat: QHat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub alpha: f64,
    pub n_trials: usize,
    pub cal_fraction: f64,
    pub seed: RngSeed,
    pub resample: Resample,
    pub trials: Vec<TrialRecord>,
    pub median_bcov: f64,
    pub median_coverage: f64,
    pub median_set_size: f64,
}

impl TrialReport {
    fn from_trials(cfg: &TrialConfig, resample: Resample, trials: Vec<TrialRecord>) -> Self {
        let bcov: Vec<f64> = trials.iter().map(|t| t.bcov).collect();
        let cov: Vec<f64> = trials.iter().map(|t| t.coverage).collect();
        let size: Vec<f64> = trials.iter().map(|t| t.mean_set_size).collect();
        TrialReport {
            alpha: cfg.alpha,
            n_trials: cfg.n_trials,
            cal_fraction: cfg.cal_fraction,
            seed: cfg.seed,
            resample,
            median_bcov: median(&bcov),
            median_coverage: median(&cov),
            median_set_size: median(&size),
            trials,
        }
    }
}

fn cal_size(n: usize, frac: f64) -> usize {
    ((n as f64 * frac).round() as usize).clamp(1, n - 1)
}

fn evaluate_trial(
    trial: usize,
    cal: (&[ProbabilityVector], &[Label]),
    eval: (&[ProbabilityVector], &[Label]),
    k: usize,
    cfg: &TrialConfig,
) -> Result<TrialRecord> {
    let c = calibrate(cal.0, cal.1, cfg.alpha)?;
    let sets: Vec<PredictionSet> = eval
        .0
        .iter()
        .map(|p| {
            if cfg.force_nonempty {
                predict_set_nonempty(p, &c)
            } else {
                predict_set(p, &c)
            }
        })
        .collect();
    Ok(TrialRecord {
        trial,
        bcov: balanced_coverage(&sets, eval.1, k)?,
        coverage: coverage(&sets, eval.1)?,
        mean_set_size: mean_set_size(&sets)?,
        n_cal: c.n_cal,
        n_eval: sets.len(),
        q_hat: c.q_hat,
    })
}

fn pick<T: Clone>(v: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| v[i].clone()).collect()
}

/// Each trial re-splits the pooled held-out predictions into calibration and
/// evaluation parts. Trial `i` uses a seed derived from `(cfg.seed, i)`, so the
/// report does not depend on scheduling.
pub fn run_trials(probs: &[ProbabilityVector], labels: &[Label], k: usize, cfg: &TrialConfig) -> Result<TrialReport> {
    cfg.validate()?;
    check_lengths(probs.len(), labels.len())?;
    let n = probs.len();
    if n < 2 {
        return Err(Error::InvalidData(format!(
            "need at least 2 held-out instances, got {n}"
        )));
    }
    let n_cal = cal_size(n, cfg.cal_fraction);
    let trials = (0..cfg.n_trials)
        .into_par_iter()
        .map(|t| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut cfg.seed.derive_named("trial", t as u64).rng());
            let (ci, ei) = idx.split_at(n_cal);
            evaluate_trial(
                t,
                (&pick(probs, ci), &pick(labels, ci)),
                (&pick(probs, ei), &pick(labels, ei)),
                k,
                cfg,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrialReport::from_trials(cfg, Resample::CalTest, trials))
}

/// Each trial draws a `cal_fraction` subset of the calibration pool; the
/// evaluation set stays fixed.
pub fn run_trials_fixed_eval(
    cal_pool: (&[ProbabilityVector], &[Label]),
    eval: (&[ProbabilityVector], &[Label]),
    k: usize,
    cfg: &TrialConfig,
) -> Result<TrialReport> {
    cfg.validate()?;
    check_lengths(cal_pool.0.len(), cal_pool.1.len())?;
    check_lengths(eval.0.len(), eval.1.len())?;
    let n = cal_pool.0.len();
    if n < 2 {
        return Err(Error::InvalidData(format!(
            "need at least 2 calibration instances, got {n}"
        )));
    }
    let n_cal = cal_size(n, cfg.cal_fraction);
    let trials = (0..cfg.n_trials)
        .into_par_iter()
        .map(|t| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut cfg.seed.derive_named("trial", t as u64).rng());
            let ci = &idx[..n_cal];
            evaluate_trial(t, (&pick(cal_pool.0, ci), &pick(cal_pool.1, ci)), eval, k, cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrialReport::from_trials(cfg, Resample::Cal, trials))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(m: &[usize]) -> PredictionSet {
        PredictionSet::new(m.to_vec(), 0.0)
    }

    fn labels(v: &[usize]) -> Vec<Label> {
        v.iter().map(|&i| Label(i)).collect()
    }

    #[test]
    fn bacc_examples() {
        let t = labels(&[0, 0, 1, 1]);
        assert_eq!(balanced_accuracy(&t, &t, 2).unwrap(), 1.0);
        assert_eq!(balanced_accuracy(&labels(&[0, 0, 0, 0]), &t, 2).unwrap(), 0.5);
        let t = labels(&[0, 0, 0]);
        assert_eq!(balanced_accuracy(&t, &t, 2).unwrap(), 1.0);
        assert!(balanced_accuracy(&[], &[], 2).is_err());
    }

    #[test]
    fn bcov_examples() {
        let t = labels(&[0, 0, 1, 1]);
        let full = vec![set(&[0, 1]); 4];
        assert_eq!(balanced_coverage(&full, &t, 2).unwrap(), 1.0);
        let empty = vec![set(&[]); 4];
        assert_eq!(balanced_coverage(&empty, &t, 2).unwrap(), 0.0);
        let mixed = vec![set(&[0]), set(&[1]), set(&[1]), set(&[0, 1])];
        assert_eq!(balanced_coverage(&mixed, &t, 2).unwrap(), 0.75);
        assert!(balanced_coverage(&[], &[], 2).is_err());
    }

    #[test]
    fn set_size_examples() {
        assert_eq!(mean_set_size(&[set(&[0]), set(&[0, 1])]).unwrap(), 1.5);
        assert_eq!(mean_set_size(&[set(&[3]), set(&[1]), set(&[0])]).unwrap(), 1.0);
        let full: Vec<usize> = (0..10).collect();
        assert_eq!(mean_set_size(&vec![set(&full); 7]).unwrap(), 10.0);
        assert!(mean_set_size(&[]).is_err());
    }

    #[test]
    fn ordinality_examples() {
        assert_eq!(ordinality_fraction(&[set(&[1, 2, 3])]), 1.0);
        assert_eq!(ordinality_fraction(&[set(&[0, 2])]), 0.0);
        assert_eq!(ordinality_fraction(&[set(&[]), set(&[2])]), 1.0);
        assert_eq!(ordinality_fraction(&[set(&[0, 1]), set(&[0, 2])]), 0.5);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    fn pool(n: usize) -> (Vec<ProbabilityVector>, Vec<Label>) {
        let probs = (0..n)
            .map(|i| {
                let a = 0.2 + 0.6 * ((i * 37 % 101) as f64 / 100.0);
                ProbabilityVector::new(vec![a, 1.0 - a]).unwrap()
            })
            .collect();
        (probs, (0..n).map(|i| Label(i % 2)).collect())
    }

    #[test]
    fn one_trial_median_is_that_trial() {
        let (p, y) = pool(40);
        let r = run_trials(&p, &y, 2, &TrialConfig::new(0.1, 1, RngSeed(5))).unwrap();
        assert_eq!(r.median_bcov, r.trials[0].bcov);
        assert_eq!(r.median_set_size, r.trials[0].mean_set_size);
    }

    #[test]
    fn trials_are_reproducible() {
        let (p, y) = pool(60);
        let cfg = TrialConfig::new(0.2, 25, RngSeed(9));
        assert_eq!(
            run_trials(&p, &y, 2, &cfg).unwrap(),
            run_trials(&p, &y, 2, &cfg).unwrap()
        );
        let fixed = run_trials_fixed_eval((&p[..30], &y[..30]), (&p[30..], &y[30..]), 2, &cfg).unwrap();
        assert!(fixed.trials.iter().all(|t| t.n_eval == 30 && t.n_cal == 15));
    }

    #[test]
    fn cal_fraction_out_of_range_is_rejected() {
        let (p, y) = pool(10);
        let mut cfg = TrialConfig::new(0.1, 3, RngSeed(1));
        cfg.cal_fraction = 1.0;
        assert!(run_trials(&p, &y, 2, &cfg).is_err());
        cfg.cal_fraction = 0.0;
        assert!(run_trials(&p, &y, 2, &cfg).is_err());
    }

    #[test]
    fn calibration_self_consistency() {
        let (p, y) = pool(57);
        for alpha in [0.05, 0.1, 0.3] {
            let c = calibrate(&p, &y, alpha).unwrap();
            let sets: Vec<_> = p.iter().map(|pi| predict_set(pi, &c)).collect();
            let n = p.len() as f64;
            let k = crate::conformal::quantile_rank(p.len(), alpha) as f64;
            assert!(coverage(&sets, &y).unwrap() >= (k / n - 1.0 / n).min(1.0));
        }
    }
}
