//! Re-training on prediction-history pseudo-labels.
//!
//! Round 1 trains on one-hot labels and records the training-set logits after
//! every epoch. Each instance's pseudo-label is the mean of its per-epoch
//! softmax outputs. Round 2 re-initializes the model and trains on the
//! pseudo-labels for the same number of epochs.

use indexmap::IndexMap;
use rayon::prelude::*;

use crate::classifier::{init_model, train, ModelParams, PredictionHistory, TrainConfig};
use crate::data::{softmax_slice, Dataset, ProbabilityVector, SoftLabel};
use crate::error::{Error, Result};

/// Normalization applied to the history sum.
pub const NORMALIZATION: &str = "mean";

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelSet {
    labels: IndexMap<String, SoftLabel>,
    /// Number of history epochs averaged.
    pub epochs: usize,
}

impl PseudoLabelSet {
    pub fn new(labels: IndexMap<String, SoftLabel>, epochs: usize) -> Self {
        PseudoLabelSet { labels, epochs }
    }

    pub fn get(&self, id: &str) -> Option<&SoftLabel> {
        self.labels.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &SoftLabel)> {
        self.labels.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.values().next().map_or(0, SoftLabel::len)
    }

    /// Targets aligned with `data.instances`.
    pub fn targets_for(&self, data: &Dataset) -> Result<Vec<SoftLabel>> {
        data.instances
            .iter()
            .map(|inst| {
                self.labels
                    .get(&inst.id)
                    .cloned()
                    .ok_or_else(|| Error::InvalidData(format!("no pseudo-label for instance {}", inst.id)))
            })
            .collect()
    }
}

/// Mean softmax over each instance's epoch rows.
pub fn form_pseudo_labels(history: &PredictionHistory) -> Result<PseudoLabelSet> {
    if history.is_empty() {
        return Err(Error::InvalidData("empty prediction history".into()));
    }
    // Re-validate shapes: histories may be assembled from external files.
    let history = PredictionHistory::from_records(history.records().to_vec())?;
    let t = history.num_epochs();
    let k = history.num_classes();
    if k < 2 {
        return Err(Error::InvalidData(format!("history has {k} classes, need at least 2")));
    }
    let labels: Vec<(String, SoftLabel)> = history
        .records()
        .par_iter()
        .map(|r| {
            // Running mean: exact when every epoch gives the same prediction.
            let mut acc = vec![0.0; k];
            for (n, row) in r.epochs.iter().enumerate() {
                let w = 1.0 / (n + 1) as f64;
                for (a, p) in acc.iter_mut().zip(softmax_slice(row)) {
                    *a += (p - *a) * w;
                }
            }
            (r.id.clone(), SoftLabel(ProbabilityVector::from_raw_unchecked(acc)))
        })
        .collect();
    Ok(PseudoLabelSet::new(labels.into_iter().collect(), t))
}

#[derive(Debug, Clone)]
pub struct Rt4uOutput {
    pub model: ModelParams,
    pub pseudo_labels: PseudoLabelSet,
    pub round1_history: PredictionHistory,
    pub round1_model: ModelParams,
}

/// Round-`r` configuration: a fresh seed per round, derived from the base seed.
pub fn round_config(cfg: &TrainConfig, round: u64) -> TrainConfig {
    TrainConfig {
        seed: cfg.seed.derive_named("rt4u-round", round),
        ..cfg.clone()
    }
}

/// Initialization seed for round `r`.
pub fn round_init_seed(cfg: &TrainConfig, round: u64) -> crate::rng::RngSeed {
    cfg.seed.derive_named("rt4u-init", round)
}

/// Round 1 on one-hot labels; the returned model and history are also the
/// plain cross-entropy baseline for the same seed.
pub fn train_round1(data: &Dataset, hidden_dim: usize, cfg: &TrainConfig) -> Result<(ModelParams, PredictionHistory)> {
    check_classes_present(data)?;
    let init = init_model(data.dim(), hidden_dim, data.num_classes, round_init_seed(cfg, 1))?;
    train(init, data, &data.one_hot_targets(), &round_config(cfg, 1))
}

/// Round 2: fresh initialization trained on the pseudo-labels.
pub fn train_round2(
    data: &Dataset,
    hidden_dim: usize,
    pseudo: &PseudoLabelSet,
    cfg: &TrainConfig,
) -> Result<ModelParams> {
    if pseudo.num_classes() != data.num_classes {
        return Err(Error::DimensionMismatch(format!(
            "pseudo-labels have {} classes, dataset has {}",
            pseudo.num_classes(),
            data.num_classes
        )));
    }
    let targets = pseudo.targets_for(data)?;
    let init = init_model(data.dim(), hidden_dim, data.num_classes, round_init_seed(cfg, 2))?;
    let (model, _) = train(init, data, &targets, &round_config(cfg, 2))?;
    Ok(model)
}

/// Full two-round procedure.
pub fn rt4u_train(data: &Dataset, hidden_dim: usize, cfg: &TrainConfig) -> Result<Rt4uOutput> {
    let (round1_model, round1_history) = train_round1(data, hidden_dim, cfg)?;
    let pseudo_labels = form_pseudo_labels(&round1_history)?;
    let model = train_round2(data, hidden_dim, &pseudo_labels, cfg)?;
    Ok(Rt4uOutput {
        model,
        pseudo_labels,
        round1_history,
        round1_model,
    })
}

fn check_classes_present(data: &Dataset) -> Result<()> {
    let missing: Vec<usize> = data
        .class_counts()
        .iter()
        .enumerate()
        .filter(|(_, c)| **c == 0)
        .map(|(k, _)| k)
        .collect();
    if !missing.is_empty() {
        return Err(Error::InvalidData(format!(
            "training split has no instances of class(es) {missing:?}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::HistoryRecord;

    fn hist(rows: Vec<(&str, Vec<Vec<f64>>)>) -> PredictionHistory {
        PredictionHistory::from_records(
            rows.into_iter()
                .map(|(id, epochs)| HistoryRecord { id: id.into(), epochs })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn single_epoch_is_softmax() {
        let z = vec![0.3, -1.2, 2.0];
        let p = form_pseudo_labels(&hist(vec![("a", vec![z.clone()])])).unwrap();
        assert_eq!(p.get("a").unwrap().as_slice(), softmax_slice(&z).as_slice());
        assert_eq!(p.epochs, 1);
    }

    #[test]
    fn opposite_confident_epochs_average_to_half() {
        let p = form_pseudo_labels(&hist(vec![("a", vec![vec![800.0, 0.0], vec![0.0, 800.0]])])).unwrap();
        assert_eq!(p.get("a").unwrap().as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn rejects_empty_history() {
        assert!(form_pseudo_labels(&PredictionHistory::default()).is_err());
    }

    #[test]
    fn targets_for_reports_missing_ids() {
        use crate::data::{Instance, Label, Split};
        let p = form_pseudo_labels(&hist(vec![("a", vec![vec![0.0, 1.0]])])).unwrap();
        let d = Dataset::new(
            vec![Instance {
                id: "zz".into(),
                features: vec![1.0],
                label: Label(0),
                study_id: "s".into(),
                informative: None,
            }],
            2,
            Split::Train,
        );
        assert!(p.targets_for(&d).is_err());
    }
}
