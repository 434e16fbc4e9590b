//! Shared domain types.
//!
//! Class indices are 0-based everywhere. Values are validated on
//! construction and immutable afterwards.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the unit-sum invariant of a probability vector.
pub const PROB_SUM_TOL: f64 = 1e-9;

/// Raw pre-softmax scores for one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LogitVector(Vec<f64>);

impl LogitVector {
    pub fn new(logits: Vec<f64>) -> Result<Self> {
        if logits.is_empty() {
            return Err(Error::InvalidData("empty logit vector".into()));
        }
        if let Some(v) = logits.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("logit {v}")));
        }
        Ok(LogitVector(logits))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

/// Nonnegative vector summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidData("empty probability vector".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0) {
            return Err(Error::InvalidData(format!(
                "probability entries must lie in [0, 1]: {probs:?}"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::InvalidData(format!("probabilities sum to {sum}, expected 1")));
        }
        Ok(ProbabilityVector(probs))
    }

    /// Numerically stable softmax; max-subtraction keeps `exp` bounded.
    pub fn from_logits(z: &LogitVector) -> Self {
        ProbabilityVector(softmax_slice(z.as_slice()))
    }

    pub(crate) fn from_raw_unchecked(probs: Vec<f64>) -> Self {
        ProbabilityVector(probs)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    /// Confidence of the predicted class.
    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        self.0.iter().filter(|p| **p > 0.0).map(|p| -p * p.ln()).sum()
    }
}

/// Class index in `0..K`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Label(pub usize);

impl Label {
    pub fn checked(class_index: usize, num_classes: usize) -> Result<Self> {
        if class_index >= num_classes {
            return Err(Error::InvalidData(format!(
                "label {class_index} out of range for {num_classes} classes"
            )));
        }
        Ok(Label(class_index))
    }

    pub fn index(self) -> usize {
        self.0
    }
}

/// Soft training target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SoftLabel(pub ProbabilityVector);

impl SoftLabel {
    pub fn one_hot(label: Label, num_classes: usize) -> Self {
        let mut v = vec![0.0; num_classes];
        v[label.0] = 1.0;
        SoftLabel(ProbabilityVector(v))
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub id: String,
    pub features: Vec<f64>,
    pub label: Label,
    pub study_id: String,
    pub informative: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Cal,
    Test,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Val, Split::Cal, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Cal => "cal",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "cal" => Ok(Split::Cal),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidData(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub instances: Vec<Instance>,
    pub num_classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(instances: Vec<Instance>, num_classes: usize, split: Split) -> Self {
        Dataset {
            instances,
            num_classes,
            split,
        }
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Feature dimension, taken from the first instance.
    pub fn dim(&self) -> usize {
        self.instances.first().map_or(0, |i| i.features.len())
    }

    pub fn labels(&self) -> Vec<Label> {
        self.instances.iter().map(|i| i.label).collect()
    }

    pub fn one_hot_targets(&self) -> Vec<SoftLabel> {
        self.instances
            .iter()
            .map(|i| SoftLabel::one_hot(i.label, self.num_classes))
            .collect()
    }

    /// Number of instances per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for inst in &self.instances {
            if inst.label.0 < self.num_classes {
                counts[inst.label.0] += 1;
            }
        }
        counts
    }
}

/// List every invariant violation in `d`; an empty list means the dataset is
/// well formed.
pub fn validate_dataset(d: &Dataset) -> Vec<String> {
    let mut out = Vec::new();
    if d.num_classes < 2 {
        out.push(format!("num_classes must be >= 2, got {}", d.num_classes));
    }
    if d.instances.is_empty() {
        out.push(format!("empty {} split", d.split));
    }
    let dim = d.dim();
    let mut seen = HashSet::with_capacity(d.instances.len());
    for inst in &d.instances {
        if !seen.insert(inst.id.as_str()) {
            out.push(format!("duplicate id: {}", inst.id));
        }
        if inst.label.0 >= d.num_classes {
            out.push(format!("label out of range: {}", inst.id));
        }
        if inst.features.len() != dim {
            out.push(format!("feature dimension mismatch: {}", inst.id));
        }
        if inst.features.iter().any(|v| !v.is_finite()) {
            out.push(format!("non-finite feature: {}", inst.id));
        }
        if inst.study_id.is_empty() {
            out.push(format!("missing study id: {}", inst.id));
        }
    }
    out
}

pub(crate) fn softmax_slice(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = out.iter().sum();
    for v in &mut out {
        *v /= s;
    }
    out
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inst(id: &str, label: usize, f: Vec<f64>) -> Instance {
        Instance {
            id: id.into(),
            features: f,
            label: Label(label),
            study_id: "s".into(),
            informative: None,
        }
    }

    #[test]
    fn well_formed_dataset_has_no_violations() {
        let d = Dataset::new(
            vec![inst("a", 0, vec![1.0, 2.0]), inst("b", 2, vec![0.0, 0.5])],
            3,
            Split::Train,
        );
        assert!(validate_dataset(&d).is_empty());
    }

    #[test]
    fn label_equal_to_k_is_reported() {
        let d = Dataset::new(vec![inst("x", 0, vec![1.0]), inst("y", 3, vec![1.0])], 3, Split::Train);
        assert_eq!(validate_dataset(&d), vec!["label out of range: y".to_string()]);
    }

    #[test]
    fn duplicate_ids_are_reported() {
        let d = Dataset::new(vec![inst("a", 0, vec![1.0]), inst("a", 1, vec![1.0])], 2, Split::Test);
        assert_eq!(validate_dataset(&d), vec!["duplicate id: a".to_string()]);
    }

    #[test]
    fn ragged_features_are_reported() {
        let d = Dataset::new(
            vec![inst("a", 0, vec![1.0]), inst("b", 1, vec![1.0, 2.0])],
            2,
            Split::Val,
        );
        assert_eq!(validate_dataset(&d), vec!["feature dimension mismatch: b".to_string()]);
    }

    #[test]
    fn probability_vector_rejects_bad_mass() {
        assert!(ProbabilityVector::new(vec![0.5, 0.6]).is_err());
        assert!(ProbabilityVector::new(vec![-0.1, 1.1]).is_err());
        assert!(ProbabilityVector::new(vec![0.25, 0.75]).is_ok());
    }

    #[test]
    fn logit_vector_rejects_nan() {
        assert!(LogitVector::new(vec![0.0, f64::NAN]).is_err());
        assert!(LogitVector::new(vec![f64::INFINITY]).is_err());
    }
}
