//! Softmax classifier with an optional tanh hidden layer.
//!
//! Trained with plain mini-batch SGD on soft targets. After every epoch a
//! clean forward pass over the full training set is appended to the
//! [`PredictionHistory`].

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, LogitVector, ProbabilityVector, SoftLabel};
use crate::error::{Error, Result};
use crate::rng::RngSeed;

/// Lower clip applied to probabilities before taking logs.
pub const LOG_EPS: f64 = 1e-12;

const INIT_SCALE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Loss {
    #[serde(rename = "ce")]
    CrossEntropySoft,
    #[serde(rename = "mae")]
    Mae,
}

impl std::str::FromStr for Loss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ce" => Ok(Loss::CrossEntropySoft),
            "mae" => Ok(Loss::Mae),
            other => Err(Error::arg("loss", format!("expected `ce` or `mae`, got `{other}`"))),
        }
    }
}

impl Loss {
    pub fn as_str(self) -> &'static str {
        match self {
            Loss::CrossEntropySoft => "ce",
            Loss::Mae => "mae",
        }
    }

    pub fn eval(self, p: &ProbabilityVector, target: &SoftLabel) -> Result<f64> {
        match self {
            Loss::CrossEntropySoft => cross_entropy_soft(p, target),
            Loss::Mae => mae_loss(p, target),
        }
    }
}

/// Dense affine layer, weights stored row-major as `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Layer {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for r in 0..self.out_dim {
            let row = &self.weights[r * self.in_dim..(r + 1) * self.in_dim];
            let dot: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum();
            out.push(dot + self.bias[r]);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub input_dim: usize,
    /// Zero means a linear model.
    pub hidden_dim: usize,
    pub num_classes: usize,
    pub activation: Activation,
    pub layers: Vec<Layer>,
}

impl ModelParams {
    /// All-zero parameters with the given architecture.
    pub fn zeros(input_dim: usize, hidden_dim: usize, num_classes: usize) -> Result<Self> {
        check_dims(input_dim, num_classes)?;
        let layers = if hidden_dim == 0 {
            vec![Layer::zeros(input_dim, num_classes)]
        } else {
            vec![
                Layer::zeros(input_dim, hidden_dim),
                Layer::zeros(hidden_dim, num_classes),
            ]
        };
        Ok(ModelParams {
            input_dim,
            hidden_dim,
            num_classes,
            activation: Activation::Tanh,
            layers,
        })
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Parameters flattened layer by layer, weights before bias.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&flat[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    /// Check the layer chain and finiteness of every parameter.
    pub fn validate(&self) -> Result<()> {
        check_dims(self.input_dim, self.num_classes)?;
        let dims: Vec<usize> = if self.hidden_dim == 0 {
            vec![self.input_dim, self.num_classes]
        } else {
            vec![self.input_dim, self.hidden_dim, self.num_classes]
        };
        if self.layers.len() + 1 != dims.len() {
            return Err(Error::InvalidData("layer count does not match architecture".into()));
        }
        for (l, w) in self.layers.iter().zip(dims.windows(2)) {
            if l.in_dim != w[0] || l.out_dim != w[1] || l.weights.len() != w[0] * w[1] || l.bias.len() != w[1] {
                return Err(Error::InvalidData("layer shapes do not chain".into()));
            }
        }
        if self.flat_params().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model parameter".into()));
        }
        Ok(())
    }

    fn check_input(&self, features: &[f64]) -> Result<()> {
        if features.len() != self.input_dim {
            return Err(Error::DimensionMismatch(format!(
                "model expects {} features, got {}",
                self.input_dim,
                features.len()
            )));
        }
        Ok(())
    }

    /// Forward pass keeping the hidden activations needed for backprop.
    fn forward(&self, x: &[f64], hidden: &mut Vec<f64>, logits: &mut Vec<f64>) {
        if self.hidden_dim == 0 {
            self.layers[0].forward(x, logits);
        } else {
            self.layers[0].forward(x, hidden);
            for h in hidden.iter_mut() {
                *h = h.tanh();
            }
            self.layers[1].forward(hidden, logits);
        }
    }
}

fn check_dims(input_dim: usize, num_classes: usize) -> Result<()> {
    if input_dim < 1 {
        return Err(Error::arg("dim", "must be >= 1"));
    }
    if num_classes < 2 {
        return Err(Error::arg("classes", "must be >= 2"));
    }
    Ok(())
}

/// Fresh parameters drawn as `0.01 * N(0, 1)`, deterministic in `seed`.
pub fn init_model(input_dim: usize, hidden_dim: usize, num_classes: usize, seed: RngSeed) -> Result<ModelParams> {
    let mut model = ModelParams::zeros(input_dim, hidden_dim, num_classes)?;
    let mut rng = seed.rng();
    for l in &mut model.layers {
        for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
            let z: f64 = StandardNormal.sample(&mut rng);
            *w = INIT_SCALE * z;
        }
    }
    Ok(model)
}

pub fn softmax(z: &LogitVector) -> ProbabilityVector {
    ProbabilityVector::from_logits(z)
}

fn check_same_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch(format!("{a} vs {b} classes")));
    }
    Ok(())
}

/// `-sum_k target_k * ln(max(p_k, 1e-12))`.
pub fn cross_entropy_soft(p: &ProbabilityVector, target: &SoftLabel) -> Result<f64> {
    check_same_len(p.len(), target.len())?;
    Ok(ce_raw(p.as_slice(), target.as_slice()))
}

/// `sum_k |p_k - target_k|`.
pub fn mae_loss(p: &ProbabilityVector, target: &SoftLabel) -> Result<f64> {
    check_same_len(p.len(), target.len())?;
    Ok(mae_raw(p.as_slice(), target.as_slice()))
}

fn ce_raw(p: &[f64], t: &[f64]) -> f64 {
    -p.iter().zip(t).map(|(p, t)| t * p.max(LOG_EPS).ln()).sum::<f64>()
}

fn mae_raw(p: &[f64], t: &[f64]) -> f64 {
    p.iter().zip(t).map(|(p, t)| (p - t).abs()).sum()
}

/// Loss and its gradient with respect to the logits.
fn loss_and_logit_grad(loss: Loss, logits: &[f64], target: &[f64], grad: &mut Vec<f64>) -> f64 {
    let p = crate::data::softmax_slice(logits);
    grad.clear();
    grad.resize(p.len(), 0.0);
    match loss {
        Loss::CrossEntropySoft => {
            // d/dz_j of -sum_k t_k ln p_k over unclipped k is sum_k t_k (p_j - [k == j]).
            let mut mass = 0.0;
            for (k, (pk, tk)) in p.iter().zip(target).enumerate() {
                if *pk >= LOG_EPS {
                    mass += tk;
                    grad[k] -= tk;
                }
            }
            for (g, pj) in grad.iter_mut().zip(&p) {
                *g += pj * mass;
            }
            ce_raw(&p, target)
        }
        Loss::Mae => {
            let s: Vec<f64> = p
                .iter()
                .zip(target)
                .map(|(p, t)| {
                    let d = p - t;
                    if d > 0.0 {
                        1.0
                    } else if d < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                })
                .collect();
            let sp: f64 = s.iter().zip(&p).map(|(s, p)| s * p).sum();
            for (j, g) in grad.iter_mut().enumerate() {
                *g = p[j] * (s[j] - sp);
            }
            mae_raw(&p, target)
        }
    }
}

/// Mean loss over a batch and its gradient with respect to every parameter,
/// flattened in the order of [`ModelParams::flat_params`].
pub fn batch_loss_and_grad(
    model: &ModelParams,
    features: &[&[f64]],
    targets: &[&[f64]],
    loss: Loss,
) -> Result<(f64, Vec<f64>)> {
    if features.len() != targets.len() || features.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "{} feature rows vs {} targets",
            features.len(),
            targets.len()
        )));
    }
    let mut grads: Vec<Layer> = model.layers.iter().map(|l| Layer::zeros(l.in_dim, l.out_dim)).collect();
    let mut hidden = Vec::new();
    let mut logits = Vec::new();
    let mut dz = Vec::new();
    let mut total = 0.0;
    for (x, t) in features.iter().zip(targets) {
        model.check_input(x)?;
        check_same_len(t.len(), model.num_classes)?;
        model.forward(x, &mut hidden, &mut logits);
        total += loss_and_logit_grad(loss, &logits, t, &mut dz);
        let last = model.layers.len() - 1;
        let input: &[f64] = if model.hidden_dim == 0 { x } else { &hidden };
        accumulate(&mut grads[last], &dz, input);
        if model.hidden_dim > 0 {
            let out = &model.layers[1];
            let mut da = vec![0.0; model.hidden_dim];
            for (r, g) in dz.iter().enumerate() {
                let row = &out.weights[r * out.in_dim..(r + 1) * out.in_dim];
                for (d, w) in da.iter_mut().zip(row) {
                    *d += g * w;
                }
            }
            for (d, h) in da.iter_mut().zip(&hidden) {
                *d *= 1.0 - h * h;
            }
            accumulate(&mut grads[0], &da, x);
        }
    }
    let n = features.len() as f64;
    let mut flat = Vec::with_capacity(model.num_params());
    for g in &grads {
        flat.extend(g.weights.iter().map(|v| v / n));
        flat.extend(g.bias.iter().map(|v| v / n));
    }
    Ok((total / n, flat))
}

fn accumulate(g: &mut Layer, delta: &[f64], input: &[f64]) {
    for (r, d) in delta.iter().enumerate() {
        let row = &mut g.weights[r * g.in_dim..(r + 1) * g.in_dim];
        for (w, x) in row.iter_mut().zip(input) {
            *w += d * x;
        }
        g.bias[r] += d;
    }
}

/// Mean loss over a batch, forward pass only.
pub fn batch_loss(model: &ModelParams, features: &[&[f64]], targets: &[&[f64]], loss: Loss) -> Result<f64> {
    let mut total = 0.0;
    for (x, t) in features.iter().zip(targets) {
        let z = predict_logits(model, x)?;
        total += match loss {
            Loss::CrossEntropySoft => ce_raw(&softmax(&z).into_inner(), t),
            Loss::Mae => mae_raw(&softmax(&z).into_inner(), t),
        };
    }
    Ok(total / features.len() as f64)
}

pub fn predict_logits(model: &ModelParams, features: &[f64]) -> Result<LogitVector> {
    model.check_input(features)?;
    let mut hidden = Vec::new();
    let mut logits = Vec::new();
    model.forward(features, &mut hidden, &mut logits);
    LogitVector::new(logits)
}

pub fn predict_logits_batch(model: &ModelParams, rows: &[&[f64]]) -> Result<Vec<LogitVector>> {
    rows.iter().map(|x| predict_logits(model, x)).collect()
}

/// Logits for every instance of a dataset, in instance order.
pub fn predict_dataset(model: &ModelParams, data: &Dataset) -> Result<Vec<LogitVector>> {
    data.instances
        .iter()
        .map(|i| predict_logits(model, &i.features))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub loss: Loss,
    pub seed: RngSeed,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::arg("epochs", "must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::arg("lr", "must be a positive finite number"));
        }
        if self.batch_size < 1 {
            return Err(Error::arg("batch", "must be >= 1"));
        }
        Ok(())
    }
}

/// One instance's logits after each epoch, `T x K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub id: String,
    pub epochs: Vec<Vec<f64>>,
}

/// Per-epoch training-set logits, in training-set order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PredictionHistory {
    records: Vec<HistoryRecord>,
}

impl PredictionHistory {
    /// Build from records, checking that every record has the same `T` and `K`
    /// and that ids are unique.
    pub fn from_records(records: Vec<HistoryRecord>) -> Result<Self> {
        let mut shape: Option<(usize, usize)> = None;
        let mut seen = std::collections::HashSet::new();
        for r in &records {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::InvalidData(format!("duplicate history id: {}", r.id)));
            }
            let t = r.epochs.len();
            if t == 0 {
                return Err(Error::InvalidData(format!("history for {} has no epochs", r.id)));
            }
            let k = r.epochs[0].len();
            if r.epochs.iter().any(|row| row.len() != k) {
                return Err(Error::InvalidData(format!("ragged history rows for {}", r.id)));
            }
            if r.epochs.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("history logit for {}", r.id)));
            }
            match shape {
                None => shape = Some((t, k)),
                Some((t0, k0)) if (t0, k0) != (t, k) => {
                    return Err(Error::InvalidData(format!(
                        "history for {} has shape {t}x{k}, expected {t0}x{k0}",
                        r.id
                    )))
                }
                _ => {}
            }
        }
        Ok(PredictionHistory { records })
    }

    pub fn records(&self) -> &[HistoryRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn num_epochs(&self) -> usize {
        self.records.first().map_or(0, |r| r.epochs.len())
    }

    pub fn num_classes(&self) -> usize {
        self.records.first().and_then(|r| r.epochs.first()).map_or(0, Vec::len)
    }

    pub fn get(&self, id: &str) -> Option<&HistoryRecord> {
        self.records.iter().find(|r| r.id == id)
    }
}

/// Mini-batch SGD on `targets` (aligned with `data.instances`), recording
/// training-set logits after every epoch.
pub fn train(
    mut model: ModelParams,
    data: &Dataset,
    targets: &[SoftLabel],
    cfg: &TrainConfig,
) -> Result<(ModelParams, PredictionHistory)> {
    cfg.validate()?;
    model.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidData("cannot train on an empty dataset".into()));
    }
    if targets.len() != data.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} targets for {} instances",
            targets.len(),
            data.len()
        )));
    }
    if data.dim() != model.input_dim {
        return Err(Error::DimensionMismatch(format!(
            "dataset has {} features, model expects {}",
            data.dim(),
            model.input_dim
        )));
    }
    if let Some(t) = targets.iter().find(|t| t.len() != model.num_classes) {
        return Err(Error::DimensionMismatch(format!(
            "target has {} classes, model expects {}",
            t.len(),
            model.num_classes
        )));
    }

    let n = data.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut epochs: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(cfg.epochs); n];
    let mut params = model.flat_params();
    let shuffle_seed = cfg.seed.derive_named("shuffle", 0);

    for epoch in 0..cfg.epochs {
        let mut rng = shuffle_seed.derive(epoch as u64).rng();
        order.shuffle(&mut rng);
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let xs: Vec<&[f64]> = chunk.iter().map(|&i| data.instances[i].features.as_slice()).collect();
            let ts: Vec<&[f64]> = chunk.iter().map(|&i| targets[i].as_slice()).collect();
            let (loss, grad) = batch_loss_and_grad(&model, &xs, &ts, cfg.loss)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged {
                    epoch: epoch + 1,
                    batch: batch + 1,
                });
            }
            for (p, g) in params.iter_mut().zip(&grad) {
                *p -= cfg.learning_rate * g;
            }
            model.set_flat_params(&params)?;
        }
        for (i, inst) in data.instances.iter().enumerate() {
            let z = predict_logits(&model, &inst.features).map_err(|_| Error::Diverged {
                epoch: epoch + 1,
                batch: 0,
            })?;
            epochs[i].push(z.into_inner());
        }
    }

    let records = data
        .instances
        .iter()
        .zip(epochs)
        .map(|(inst, e)| HistoryRecord {
            id: inst.id.clone(),
            epochs: e,
        })
        .collect();
    Ok((model, PredictionHistory::from_records(records)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Instance, Label, Split};

    fn pv(v: &[f64]) -> ProbabilityVector {
        ProbabilityVector::new(v.to_vec()).unwrap()
    }

    fn sl(v: &[f64]) -> SoftLabel {
        SoftLabel(pv(v))
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let p = softmax(&LogitVector::new(vec![0.0; 3]).unwrap());
        for v in p.as_slice() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_ln2_gap() {
        for c in [-50.0, 0.0, 3.5, 700.0] {
            let p = softmax(&LogitVector::new(vec![c, c + 2f64.ln()]).unwrap());
            assert!((p.as_slice()[0] - 1.0 / 3.0).abs() < 1e-12);
            assert!((p.as_slice()[1] - 2.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_large_logit_does_not_overflow() {
        let p = softmax(&LogitVector::new(vec![1000.0, 0.0]).unwrap());
        assert_eq!(p.as_slice()[0], 1.0);
        assert!(p.as_slice()[1] < 1e-300);
    }

    #[test]
    fn ce_examples() {
        let one_hot = sl(&[1.0, 0.0, 0.0]);
        assert!(cross_entropy_soft(&pv(&[1.0, 0.0, 0.0]), &one_hot).unwrap().abs() < 1e-12);
        let half = pv(&[0.5, 0.5]);
        assert!((cross_entropy_soft(&half, &SoftLabel(half.clone())).unwrap() - 2f64.ln()).abs() < 1e-15);
        let expected = -(0.3 * 0.6f64.ln() + 0.7 * 0.4f64.ln());
        let got = cross_entropy_soft(&pv(&[0.6, 0.4]), &sl(&[0.3, 0.7])).unwrap();
        assert!((got - expected).abs() < 1e-15);
        assert!(cross_entropy_soft(&pv(&[0.5, 0.5]), &sl(&[1.0, 0.0, 0.0])).is_err());
    }

    #[test]
    fn mae_examples() {
        let p = pv(&[0.2, 0.8]);
        assert_eq!(mae_loss(&p, &SoftLabel(p.clone())).unwrap(), 0.0);
        assert_eq!(mae_loss(&pv(&[0.0, 1.0]), &sl(&[1.0, 0.0])).unwrap(), 2.0);
        assert!((mae_loss(&pv(&[0.6, 0.4]), &sl(&[1.0, 0.0])).unwrap() - 0.8).abs() < 1e-15);
        assert!(mae_loss(&pv(&[0.5, 0.5]), &sl(&[1.0, 0.0, 0.0])).is_err());
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let a = init_model(4, 0, 3, RngSeed(1)).unwrap();
        let b = init_model(4, 0, 3, RngSeed(1)).unwrap();
        let c = init_model(4, 0, 3, RngSeed(2)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.layers.len(), 1);
        assert_eq!((a.layers[0].out_dim, a.layers[0].in_dim), (3, 4));
        assert_eq!(a.layers[0].weights.len(), 12);
    }

    #[test]
    fn init_rejects_bad_dims() {
        assert!(init_model(0, 0, 3, RngSeed(1)).is_err());
        assert!(init_model(3, 0, 1, RngSeed(1)).is_err());
    }

    #[test]
    fn zero_model_gives_zero_logits() {
        let m = ModelParams::zeros(3, 2, 4).unwrap();
        let z = predict_logits(&m, &[1.0, -2.0, 0.5]).unwrap();
        assert_eq!(z.as_slice(), &[0.0; 4]);
    }

    #[test]
    fn linear_model_is_affine() {
        let mut m = ModelParams::zeros(2, 0, 2).unwrap();
        m.layers[0].weights = vec![1.0, 2.0, -3.0, 0.5];
        m.layers[0].bias = vec![0.25, -1.0];
        let z = predict_logits(&m, &[2.0, 4.0]).unwrap();
        assert_eq!(
            z.as_slice(),
            &[1.0 * 2.0 + 2.0 * 4.0 + 0.25, -3.0 * 2.0 + 0.5 * 4.0 - 1.0]
        );
        assert!(predict_logits(&m, &[1.0]).is_err());
    }

    fn blobs(n: usize) -> Dataset {
        let instances = (0..n)
            .map(|i| {
                let label = i % 2;
                let sign = if label == 0 { -1.0 } else { 1.0 };
                let jitter = (i as f64 * 0.37).sin() * 0.3;
                Instance {
                    id: format!("i{i}"),
                    features: vec![sign * 2.0 + jitter, jitter - sign],
                    label: Label(label),
                    study_id: format!("s{i}"),
                    informative: Some(true),
                }
            })
            .collect();
        Dataset::new(instances, 2, Split::Train)
    }

    fn cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            learning_rate: 0.5,
            batch_size: 8,
            loss: Loss::CrossEntropySoft,
            seed: RngSeed(3),
        }
    }

    #[test]
    fn separable_blobs_are_fit() {
        let d = blobs(100);
        let m = init_model(2, 0, 2, RngSeed(0)).unwrap();
        let (m, _) = train(m, &d, &d.one_hot_targets(), &cfg(30)).unwrap();
        let correct = d
            .instances
            .iter()
            .filter(|i| predict_logits(&m, &i.features).unwrap().argmax() == i.label.0)
            .count();
        assert!(correct as f64 / d.len() as f64 >= 0.99);
    }

    #[test]
    fn history_shape_and_determinism() {
        let d = blobs(20);
        let m = init_model(2, 3, 2, RngSeed(0)).unwrap();
        let (_, h1) = train(m.clone(), &d, &d.one_hot_targets(), &cfg(1)).unwrap();
        assert_eq!(h1.len(), 20);
        assert!(h1.records().iter().all(|r| r.epochs.len() == 1));
        let (m2, h2) = train(m.clone(), &d, &d.one_hot_targets(), &cfg(4)).unwrap();
        let (m3, h3) = train(m, &d, &d.one_hot_targets(), &cfg(4)).unwrap();
        assert_eq!(h2, h3);
        assert_eq!(m2, m3);
        assert_eq!(h2.num_epochs(), 4);
    }

    #[test]
    fn divergence_is_reported_with_location() {
        let d = blobs(10);
        let m = init_model(2, 0, 2, RngSeed(0)).unwrap();
        let mut c = cfg(3);
        c.learning_rate = 1e308;
        match train(m, &d, &d.one_hot_targets(), &c) {
            Err(Error::Diverged { epoch, batch }) => {
                assert!(epoch >= 1 && batch <= 2);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn history_rejects_inconsistent_shapes() {
        let recs = vec![
            HistoryRecord {
                id: "a".into(),
                epochs: vec![vec![0.0, 1.0]],
            },
            HistoryRecord {
                id: "b".into(),
                epochs: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            },
        ];
        assert!(PredictionHistory::from_records(recs).is_err());
    }
}
