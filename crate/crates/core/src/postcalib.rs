//! Temperature scaling and expected calibration error.

use serde::{Deserialize, Serialize};

use crate::data::{Label, LogitVector, ProbabilityVector};
use crate::error::{Error, Result};

pub const MIN_TEMPERATURE: f64 = 0.05;
pub const MAX_TEMPERATURE: f64 = 20.0;
/// Absolute tolerance of the golden-section search on `ln t`.
pub const LOG_T_TOL: f64 = 1e-4;
pub const DEFAULT_BINS: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Temperature(f64);

impl Temperature {
    pub fn new(t: f64) -> Result<Self> {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::arg(
                "temperature",
                format!("must be positive and finite, got {t}"),
            ));
        }
        Ok(Temperature(t))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for Temperature {
    fn default() -> Self {
        Temperature(1.0)
    }
}

pub fn apply_temperature(z: &LogitVector, temp: Temperature) -> LogitVector {
    // Division by t < 1 can overflow for huge logits; saturate instead.
    let scaled = z
        .as_slice()
        .iter()
        .map(|v| (v / temp.0).clamp(-f64::MAX, f64::MAX))
        .collect();
    LogitVector::new(scaled).expect("scaled logits are finite")
}

/// Mean negative log-likelihood of `softmax(z / t)`.
pub fn nll(logits: &[LogitVector], labels: &[Label], t: f64) -> Result<f64> {
    if logits.len() != labels.len() || logits.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "{} logit vectors vs {} labels",
            logits.len(),
            labels.len()
        )));
    }
    let mut total = 0.0;
    for (z, y) in logits.iter().zip(labels) {
        let z = z.as_slice();
        let zy = *z
            .get(y.0)
            .ok_or_else(|| Error::InvalidData(format!("label {} out of range", y.0)))?
            / t;
        let m = z.iter().map(|v| v / t).fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v / t - m).exp()).sum::<f64>().ln();
        total += lse - zy;
    }
    Ok(total / logits.len() as f64)
}

/// Temperature minimizing validation NLL, via golden-section search on
/// `ln t` over `[ln 0.05, ln 20]`.
pub fn fit_temperature(val_logits: &[LogitVector], val_labels: &[Label]) -> Result<Temperature> {
    if val_logits.is_empty() {
        return Err(Error::InvalidData("empty validation set".into()));
    }
    if val_labels.iter().all(|y| *y == val_labels[0]) {
        return Err(Error::InvalidData(
            "temperature fit needs at least two distinct classes in the validation labels".into(),
        ));
    }
    let f = |u: f64| nll(val_logits, val_labels, u.exp());
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (MIN_TEMPERATURE.ln(), MAX_TEMPERATURE.ln());
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    while b - a > LOG_T_TOL {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d)?;
        }
    }
    let mid = 0.5 * (a + b);
    // The identity temperature is always a candidate, so the fit never
    // scores worse than leaving logits untouched.
    let mut best = (f(mid)?, mid.exp());
    for t in [1.0, MIN_TEMPERATURE, MAX_TEMPERATURE] {
        let v = nll(val_logits, val_labels, t)?;
        if v < best.0 {
            best = (v, t);
        }
    }
    Temperature::new(best.1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub mean_conf: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityReport {
    pub bins: Vec<ReliabilityBin>,
    pub ece: f64,
}

impl ReliabilityReport {
    pub fn total(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }

    pub fn edges(&self) -> Vec<f64> {
        let mut e: Vec<f64> = self.bins.iter().map(|b| b.lo).collect();
        if let Some(b) = self.bins.last() {
            e.push(b.hi);
        }
        e
    }
}

/// Bin by confidence (max probability) into `bins` equal-width bins on
/// `[0, 1]`; a confidence of exactly 1.0 falls in the last bin.
pub fn expected_calibration_error(
    probs: &[ProbabilityVector],
    labels: &[Label],
    bins: usize,
) -> Result<ReliabilityReport> {
    if bins < 1 {
        return Err(Error::arg("bins", "must be >= 1"));
    }
    if probs.is_empty() || probs.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} probability vectors vs {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let mut count = vec![0usize; bins];
    let mut conf_sum = vec![0.0; bins];
    let mut correct = vec![0usize; bins];
    for (p, y) in probs.iter().zip(labels) {
        let conf = p.max();
        let b = ((conf * bins as f64).floor() as usize).min(bins - 1);
        count[b] += 1;
        conf_sum[b] += conf;
        if p.argmax() == y.0 {
            correct[b] += 1;
        }
    }
    let total = probs.len() as f64;
    let mut ece = 0.0;
    let out = (0..bins)
        .map(|b| {
            let (mean_conf, accuracy) = if count[b] > 0 {
                let n = count[b] as f64;
                (conf_sum[b] / n, correct[b] as f64 / n)
            } else {
                (0.0, 0.0)
            };
            ece += count[b] as f64 / total * (accuracy - mean_conf).abs();
            ReliabilityBin {
                lo: b as f64 / bins as f64,
                hi: (b + 1) as f64 / bins as f64,
                count: count[b],
                mean_conf,
                accuracy,
            }
        })
        .collect();
    Ok(ReliabilityReport { bins: out, ece })
}
