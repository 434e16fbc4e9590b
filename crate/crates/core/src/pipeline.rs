//! Split-level evaluation shared by the CLI and the test suites: temperature
//! handling, study aggregation, conformal calibration and the headline
//! metrics at instance and study level.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::aggregate::{aggregate_dataset, AggMethod};
use crate::config::{Level, RunConfig, TemperatureMode};
use crate::conformal::{calibrate, predict_set, predict_set_nonempty, ConformalCalibration, PredictionSet, QHat};
use crate::data::{validate_dataset, Dataset, Label, LogitVector, ProbabilityVector, Split};
use crate::error::{Error, Result};
use crate::io::{self, LogitRow, Provenance};
use crate::metrics::{
    balanced_accuracy, balanced_coverage, coverage, mean_set_size, ordinality_fraction, run_trials,
    run_trials_fixed_eval, Resample, TrialConfig, TrialReport,
};
use crate::postcalib::{
    apply_temperature, expected_calibration_error, fit_temperature, nll, ReliabilityReport, Temperature,
};
use crate::rng::RNG_ALGORITHM;
use crate::synthdata::QuadrantGenConfig;

pub const METADATA_FILE: &str = "metadata.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSize {
    pub instances: usize,
    pub studies: usize,
}

/// Dataset directory metadata. Only `num_classes` is required for externally
/// prepared data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub num_classes: usize,
    #[serde(default)]
    pub dim: usize,
    /// Whether class indices follow a meaningful order (e.g. severity grades).
    #[serde(default)]
    pub ordinal: bool,
    #[serde(default)]
    pub split_sizes: Option<HashMap<String, SplitSize>>,
    #[serde(default)]
    pub generator: Option<QuadrantGenConfig>,
    #[serde(default)]
    pub fractions: Option<[f64; 4]>,
    #[serde(default)]
    pub rng_algorithm: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub tool_version: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitData {
    pub metadata: DatasetMetadata,
    pub train: Dataset,
    pub val: Dataset,
    pub cal: Dataset,
    pub test: Dataset,
}

fn study_count(d: &Dataset) -> usize {
    d.instances
        .iter()
        .map(|i| i.study_id.as_str())
        .collect::<std::collections::HashSet<_>>()
        .len()
}

impl SplitData {
    pub fn from_parts(parts: [Dataset; 4], ordinal: bool) -> Self {
        let [train, val, cal, test] = parts;
        let sizes = [&train, &val, &cal, &test]
            .iter()
            .map(|d| {
                (
                    d.split.to_string(),
                    SplitSize {
                        instances: d.len(),
                        studies: study_count(d),
                    },
                )
            })
            .collect();
        SplitData {
            metadata: DatasetMetadata {
                num_classes: train.num_classes,
                dim: [&train, &val, &cal, &test].iter().map(|d| d.dim()).max().unwrap_or(0),
                ordinal,
                split_sizes: Some(sizes),
                generator: None,
                fractions: None,
                rng_algorithm: Some(RNG_ALGORITHM.to_string()),
                seed: None,
                tool_version: None,
            },
            train,
            val,
            cal,
            test,
        }
    }

    pub fn get(&self, split: Split) -> &Dataset {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Cal => &self.cal,
            Split::Test => &self.test,
        }
    }

    pub fn file_name(split: Split) -> String {
        format!("{split}.csv")
    }

    pub fn write(&self, dir: &Path, prov: &Provenance) -> Result<()> {
        for s in Split::ALL {
            io::write_dataset(&dir.join(Self::file_name(s)), self.get(s), prov)?;
        }
        let mut meta = self.metadata.clone();
        meta.seed = Some(prov.seed);
        meta.tool_version = Some(prov.tool_version.clone());
        io::write_json(&dir.join(METADATA_FILE), &meta)
    }

    /// Read a dataset directory. Missing split files are treated as empty.
    pub fn read(dir: &Path) -> Result<Self> {
        let metadata: DatasetMetadata = io::read_json(&dir.join(METADATA_FILE))?;
        let k = metadata.num_classes;
        let load = |s: Split| -> Result<Dataset> {
            let p = dir.join(Self::file_name(s));
            if p.exists() {
                io::read_dataset(&p, k, s)
            } else {
                Ok(Dataset::new(Vec::new(), k, s))
            }
        };
        let out = SplitData {
            train: load(Split::Train)?,
            val: load(Split::Val)?,
            cal: load(Split::Cal)?,
            test: load(Split::Test)?,
            metadata,
        };
        for s in Split::ALL {
            let d = out.get(s);
            if d.is_empty() {
                continue;
            }
            let v = validate_dataset(d);
            if !v.is_empty() {
                return Err(Error::InvalidData(format!("{s} split: {}", v.join("; "))));
            }
        }
        Ok(out)
    }
}

/// Logits for each split, aligned with the split's instance order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SplitLogits {
    pub train: Vec<LogitVector>,
    pub val: Vec<LogitVector>,
    pub cal: Vec<LogitVector>,
    pub test: Vec<LogitVector>,
}

impl SplitLogits {
    pub fn get(&self, split: Split) -> &[LogitVector] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Cal => &self.cal,
            Split::Test => &self.test,
        }
    }

    fn get_mut(&mut self, split: Split) -> &mut Vec<LogitVector> {
        match split {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
            Split::Cal => &mut self.cal,
            Split::Test => &mut self.test,
        }
    }

    /// Rows for the logits CSV, split by split.
    pub fn to_rows(&self, data: &SplitData) -> Vec<LogitRow> {
        let mut rows = Vec::new();
        for s in Split::ALL {
            for (inst, z) in data.get(s).instances.iter().zip(self.get(s)) {
                rows.push(LogitRow {
                    id: inst.id.clone(),
                    split: s,
                    logits: z.clone(),
                });
            }
        }
        rows
    }

    /// Join logit rows onto the dataset splits by id. Every instance of a
    /// non-empty split must have a row.
    pub fn from_rows(rows: Vec<LogitRow>, data: &SplitData) -> Result<Self> {
        let k = data.metadata.num_classes;
        let mut by_id: HashMap<(Split, String), LogitVector> = HashMap::with_capacity(rows.len());
        for r in rows {
            if r.logits.len() != k {
                return Err(Error::DimensionMismatch(format!(
                    "logits for {} have {} classes, dataset has {k}",
                    r.id,
                    r.logits.len()
                )));
            }
            if by_id.insert((r.split, r.id.clone()), r.logits).is_some() {
                return Err(Error::InvalidData(format!(
                    "duplicate logits row for {} in {}",
                    r.id, r.split
                )));
            }
        }
        let mut out = SplitLogits::default();
        for s in Split::ALL {
            let d = data.get(s);
            let have = d
                .instances
                .iter()
                .filter(|i| by_id.contains_key(&(s, i.id.clone())))
                .count();
            if have == 0 {
                continue;
            }
            for inst in &d.instances {
                let z = by_id
                    .remove(&(s, inst.id.clone()))
                    .ok_or_else(|| Error::InvalidData(format!("no logits for {} in {s} split", inst.id)))?;
                out.get_mut(s).push(z);
            }
        }
        Ok(out)
    }

    pub fn scaled(&self, t: Temperature) -> Self {
        let f = |v: &[LogitVector]| v.iter().map(|z| apply_temperature(z, t)).collect();
        SplitLogits {
            train: f(&self.train),
            val: f(&self.val),
            cal: f(&self.cal),
            test: f(&self.test),
        }
    }
}

/// Predictions at one aggregation level for one split.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelPredictions {
    pub ids: Vec<String>,
    pub probs: Vec<ProbabilityVector>,
    pub labels: Vec<Label>,
    /// Instance-level only; `None` for studies or unknown.
    pub informative: Vec<Option<bool>>,
}

impl LevelPredictions {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn instances(d: &Dataset, logits: &[LogitVector]) -> Result<Self> {
        if logits.len() != d.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} logit vectors for {} instances in {}",
                logits.len(),
                d.len(),
                d.split
            )));
        }
        Ok(LevelPredictions {
            ids: d.instances.iter().map(|i| i.id.clone()).collect(),
            probs: logits.iter().map(ProbabilityVector::from_logits).collect(),
            labels: d.labels(),
            informative: d.instances.iter().map(|i| i.informative).collect(),
        })
    }

    pub fn studies(
        d: &Dataset,
        logits: &[LogitVector],
        method: AggMethod,
        weights: Option<&HashMap<String, f64>>,
    ) -> Result<Self> {
        let studies = aggregate_dataset(d, logits, method, weights)?;
        Ok(LevelPredictions {
            ids: studies.iter().map(|s| s.study_id.clone()).collect(),
            labels: studies.iter().map(|s| s.label).collect(),
            informative: vec![None; studies.len()],
            probs: studies.into_iter().map(|s| s.prob).collect(),
        })
    }

    pub fn at_level(
        level: Level,
        d: &Dataset,
        logits: &[LogitVector],
        method: AggMethod,
        weights: Option<&HashMap<String, f64>>,
    ) -> Result<Self> {
        match level {
            Level::Instance => Self::instances(d, logits),
            Level::Study => Self::studies(d, logits, method, weights),
        }
    }

    pub fn predicted(&self) -> Vec<Label> {
        self.probs.iter().map(|p| Label(p.argmax())).collect()
    }
}

/// Temperature for the requested mode, fitted on validation logits for `fit`.
pub fn resolve_temperature(mode: TemperatureMode, data: &SplitData, logits: &SplitLogits) -> Result<Temperature> {
    match mode {
        TemperatureMode::None => Ok(Temperature::default()),
        TemperatureMode::Fixed(t) => Temperature::new(t),
        TemperatureMode::Fit => {
            if logits.val.is_empty() {
                return Err(Error::InvalidData("temperature fitting needs validation logits".into()));
            }
            fit_temperature(&logits.val, &data.val.labels())
        }
    }
}

pub fn build_sets(probs: &[ProbabilityVector], cal: &ConformalCalibration, force_nonempty: bool) -> Vec<PredictionSet> {
    probs
        .iter()
        .map(|p| {
            if force_nonempty {
                predict_set_nonempty(p, cal)
            } else {
                predict_set(p, cal)
            }
        })
        .collect()
}

/// Conformal outputs at one level: calibration on the cal split, sets on the
/// test split and the repeated-trial report over the held-out data.
#[derive(Debug, Clone)]
pub struct ConformalRun {
    pub calibration: ConformalCalibration,
    pub test: LevelPredictions,
    pub sets: Vec<PredictionSet>,
    pub trials: TrialReport,
}

pub fn conformal_at_level(
    cal: &LevelPredictions,
    test: &LevelPredictions,
    k: usize,
    trial_cfg: &TrialConfig,
    resample: Resample,
) -> Result<ConformalRun> {
    if cal.is_empty() {
        return Err(Error::InvalidData("calibration split is empty".into()));
    }
    if test.is_empty() {
        return Err(Error::InvalidData("test split is empty".into()));
    }
    let calibration = calibrate(&cal.probs, &cal.labels, trial_cfg.alpha)?;
    let sets = build_sets(&test.probs, &calibration, trial_cfg.force_nonempty);
    let trials = match resample {
        Resample::CalTest => {
            let probs: Vec<_> = cal.probs.iter().chain(&test.probs).cloned().collect();
            let labels: Vec<_> = cal.labels.iter().chain(&test.labels).copied().collect();
            run_trials(&probs, &labels, k, trial_cfg)?
        }
        Resample::Cal => run_trials_fixed_eval((&cal.probs, &cal.labels), (&test.probs, &test.labels), k, trial_cfg)?,
    };
    Ok(ConformalRun {
        calibration,
        test: test.clone(),
        sets,
        trials,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelMetrics {
    pub n_test: usize,
    pub bacc: f64,
    pub ece: f64,
    pub nll: Option<f64>,
    pub q_hat: QHat,
    pub n_cal: usize,
    pub bcov: f64,
    pub coverage: f64,
    pub mean_set_size: f64,
    pub empty_set_fraction: f64,
    pub ordinality_fraction: f64,
    pub median_bcov: f64,
    pub median_coverage: f64,
    pub median_set_size: f64,
    /// Mean set size over informative / non-informative test instances.
    pub mean_set_size_informative: Option<f64>,
    pub mean_set_size_noninformative: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub tool_version: String,
    pub seed: u64,
    pub alpha: f64,
    pub temperature: f64,
    pub ordinal_classes: bool,
    pub force_nonempty: bool,
    pub n_trials: usize,
    pub resample: Resample,
    pub study_aggregation: AggMethod,
    pub instance: LevelMetrics,
    pub study: LevelMetrics,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: EvaluationReport,
    pub reliability_instance: ReliabilityReport,
    pub reliability_study: ReliabilityReport,
    pub instance: ConformalRun,
    pub study: ConformalRun,
}

fn mean_size_where(run: &ConformalRun, want: bool) -> Option<f64> {
    let sizes: Vec<usize> = run
        .sets
        .iter()
        .zip(&run.test.informative)
        .filter(|(_, f)| **f == Some(want))
        .map(|(s, _)| s.len())
        .collect();
    (!sizes.is_empty()).then(|| sizes.iter().sum::<usize>() as f64 / sizes.len() as f64)
}

fn level_metrics(
    run: &ConformalRun,
    k: usize,
    bins: usize,
    nll: Option<f64>,
) -> Result<(LevelMetrics, ReliabilityReport)> {
    let test = &run.test;
    let rel = expected_calibration_error(&test.probs, &test.labels, bins)?;
    let metrics = LevelMetrics {
        n_test: test.len(),
        bacc: balanced_accuracy(&test.predicted(), &test.labels, k)?,
        ece: rel.ece,
        nll,
        q_hat: run.calibration.q_hat,
        n_cal: run.calibration.n_cal,
        bcov: balanced_coverage(&run.sets, &test.labels, k)?,
        coverage: coverage(&run.sets, &test.labels)?,
        mean_set_size: mean_set_size(&run.sets)?,
        empty_set_fraction: run.sets.iter().filter(|s| s.is_empty()).count() as f64 / run.sets.len() as f64,
        ordinality_fraction: ordinality_fraction(&run.sets),
        median_bcov: run.trials.median_bcov,
        median_coverage: run.trials.median_coverage,
        median_set_size: run.trials.median_set_size,
        mean_set_size_informative: mean_size_where(run, true),
        mean_set_size_noninformative: mean_size_where(run, false),
    };
    Ok((metrics, rel))
}

/// Full evaluation of one set of logits: temperature, both levels, conformal
/// sets on test, repeated trials, ECE.
pub fn evaluate(
    data: &SplitData,
    logits: &SplitLogits,
    cfg: &RunConfig,
    weights: Option<&HashMap<String, f64>>,
) -> Result<Evaluation> {
    let k = data.metadata.num_classes;
    if data.test.is_empty() || logits.test.is_empty() {
        return Err(Error::InvalidData("test split is empty".into()));
    }
    let temp = resolve_temperature(cfg.temperature_mode()?, data, logits)?;
    let scaled = logits.scaled(temp);
    let method = cfg.agg_method();
    let trial_cfg = cfg.trial_config();

    let inst_cal = LevelPredictions::instances(&data.cal, &scaled.cal)?;
    let inst_test = LevelPredictions::instances(&data.test, &scaled.test)?;
    let instance = conformal_at_level(&inst_cal, &inst_test, k, &trial_cfg, cfg.resample)?;
    let test_nll = nll(&scaled.test, &data.test.labels(), 1.0)?;
    let (inst_metrics, rel_i) = level_metrics(&instance, k, cfg.bins, Some(test_nll))?;

    let study_cal = LevelPredictions::studies(&data.cal, &scaled.cal, method, weights)?;
    let study_test = LevelPredictions::studies(&data.test, &scaled.test, method, weights)?;
    let study = conformal_at_level(&study_cal, &study_test, k, &trial_cfg, cfg.resample)?;
    let (study_metrics, rel_s) = level_metrics(&study, k, cfg.bins, None)?;

    Ok(Evaluation {
        report: EvaluationReport {
            tool_version: Provenance::current(cfg.seed).tool_version,
            seed: cfg.seed,
            alpha: cfg.alpha,
            temperature: temp.value(),
            ordinal_classes: data.metadata.ordinal,
            force_nonempty: cfg.force_nonempty,
            n_trials: cfg.trials,
            resample: cfg.resample,
            study_aggregation: method,
            instance: inst_metrics,
            study: study_metrics,
        },
        reliability_instance: rel_i,
        reliability_study: rel_s,
        instance,
        study,
    })
}
