//! Study-level aggregation of instance predictions.

use std::collections::HashMap;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::data::{softmax_slice, Dataset, Label, LogitVector, ProbabilityVector};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggMethod {
    /// Softmax of the summed instance logits.
    LogitSum,
    /// Softmax of the mean instance logit.
    LogitMean,
    /// Weighted mean of instance probability vectors.
    WeightedProb,
}

impl AggMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            AggMethod::LogitSum => "logit_sum",
            AggMethod::LogitMean => "logit_mean",
            AggMethod::WeightedProb => "weighted_prob",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyPrediction {
    pub study_id: String,
    pub prob: ProbabilityVector,
    pub n_instances: usize,
    pub method: AggMethod,
    pub label: Label,
}

fn summed(logits: &[LogitVector]) -> Result<Vec<f64>> {
    let first = logits
        .first()
        .ok_or_else(|| Error::InvalidData("cannot aggregate an empty study".into()))?;
    let k = first.len();
    let mut acc = vec![0.0; k];
    for z in logits {
        if z.len() != k {
            return Err(Error::DimensionMismatch(format!(
                "{} vs {k} classes in one study",
                z.len()
            )));
        }
        for (a, v) in acc.iter_mut().zip(z.as_slice()) {
            *a += v;
        }
    }
    Ok(acc)
}

/// `softmax(sum_j z_j)`.
pub fn aggregate_logits(logits: &[LogitVector]) -> Result<ProbabilityVector> {
    let acc = summed(logits)?;
    Ok(ProbabilityVector::from_logits(&LogitVector::new(acc)?))
}

/// `softmax(mean_j z_j)`.
pub fn aggregate_logits_mean(logits: &[LogitVector]) -> Result<ProbabilityVector> {
    let m = logits.len() as f64;
    let acc = summed(logits)?.into_iter().map(|v| v / m).collect();
    Ok(ProbabilityVector::from_logits(&LogitVector::new(acc)?))
}

/// `(sum_j w_j p_j) / (sum_j w_j)`.
pub fn aggregate_weighted(probs: &[ProbabilityVector], weights: &[f64]) -> Result<ProbabilityVector> {
    if probs.is_empty() {
        return Err(Error::InvalidData("cannot aggregate an empty study".into()));
    }
    if probs.len() != weights.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} probability vectors vs {} weights",
            probs.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::InvalidData("weights must be finite and nonnegative".into()));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidData("weights sum to zero".into()));
    }
    let k = probs[0].len();
    let mut acc = vec![0.0; k];
    for (p, w) in probs.iter().zip(weights) {
        if p.len() != k {
            return Err(Error::DimensionMismatch(format!(
                "{} vs {k} classes in one study",
                p.len()
            )));
        }
        for (a, v) in acc.iter_mut().zip(p.as_slice()) {
            *a += w * v;
        }
    }
    for a in &mut acc {
        *a /= total;
    }
    Ok(ProbabilityVector::from_raw_unchecked(acc))
}

/// Partition `(study_id, item)` pairs by study. Groups appear in order of
/// first occurrence and keep input order within each group.
pub fn group_by_study<S, T, I>(items: I) -> IndexMap<String, Vec<T>>
where
    S: Into<String>,
    I: IntoIterator<Item = (S, T)>,
{
    let mut out: IndexMap<String, Vec<T>> = IndexMap::new();
    for (s, t) in items {
        out.entry(s.into()).or_default().push(t);
    }
    out
}

/// Aggregate per-instance logits (aligned with `data.instances`) to one
/// prediction per study. `weights` maps instance id to weight and is required
/// for [`AggMethod::WeightedProb`].
pub fn aggregate_dataset(
    data: &Dataset,
    logits: &[LogitVector],
    method: AggMethod,
    weights: Option<&HashMap<String, f64>>,
) -> Result<Vec<StudyPrediction>> {
    if logits.len() != data.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} logit vectors for {} instances",
            logits.len(),
            data.len()
        )));
    }
    let groups = group_by_study(
        data.instances
            .iter()
            .zip(logits)
            .map(|(inst, z)| (inst.study_id.as_str(), (inst, z))),
    );
    groups
        .into_iter()
        .map(|(study_id, members)| {
            let label = members[0].0.label;
            if let Some((bad, _)) = members.iter().find(|(i, _)| i.label != label) {
                return Err(Error::InvalidData(format!(
                    "study {study_id} mixes labels ({} on {})",
                    bad.label.0, bad.id
                )));
            }
            let zs: Vec<LogitVector> = members.iter().map(|(_, z)| (*z).clone()).collect();
            let prob = match method {
                AggMethod::LogitSum => aggregate_logits(&zs)?,
                AggMethod::LogitMean => aggregate_logits_mean(&zs)?,
                AggMethod::WeightedProb => {
                    let w = weights.ok_or_else(|| Error::arg("weights", "required for weighted aggregation"))?;
                    let ws = members
                        .iter()
                        .map(|(i, _)| {
                            w.get(&i.id)
                                .copied()
                                .ok_or_else(|| Error::InvalidData(format!("no weight for instance {}", i.id)))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let ps: Vec<ProbabilityVector> = zs
                        .iter()
                        .map(|z| ProbabilityVector::from_raw_unchecked(softmax_slice(z.as_slice())))
                        .collect();
                    aggregate_weighted(&ps, &ws)?
                }
            };
            Ok(StudyPrediction {
                study_id,
                prob,
                n_instances: members.len(),
                method,
                label,
            })
        })
        .collect()
}
