//! Resolved run configuration.
//!
//! Values are layered: built-in defaults, then a named preset, then a
//! key-value config file, then command-line flags. The fully resolved record
//! is written next to every command's outputs as `resolved_config.toml`, and
//! feeding that file back through `--config` reproduces the run.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::aggregate::AggMethod;
use crate::classifier::{Loss, TrainConfig};
use crate::error::{Error, Result};
use crate::metrics::{Resample, TrialConfig};
use crate::rng::RngSeed;
use crate::synthdata::QuadrantGenConfig;

pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.toml";

/// Hyperparameters of the four published experimental settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    CifarQ,
    Tmed2,
    AsR2plus1d,
    AsProtoasnet,
}

impl Preset {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cifar-q" => Ok(Preset::CifarQ),
            "tmed2" => Ok(Preset::Tmed2),
            "as-r2plus1d" => Ok(Preset::AsR2plus1d),
            "as-protoasnet" => Ok(Preset::AsProtoasnet),
            other => Err(Error::arg(
                "preset",
                format!("unknown preset `{other}` (cifar-q, tmed2, as-r2plus1d, as-protoasnet)"),
            )),
        }
    }

    /// `(learning rate, batch size, classes, epochs, alpha)`.
    pub fn settings(self) -> (f64, usize, usize, usize, f64) {
        match self {
            Preset::CifarQ => (1e-4, 256, 10, 10, 0.05),
            Preset::Tmed2 => (7e-4, 128, 3, 15, 0.1),
            Preset::AsR2plus1d => (1e-4, 32, 3, 30, 0.1),
            Preset::AsProtoasnet => (1e-4, 32, 3, 100, 0.1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Instance,
    Study,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggKind {
    LogitSum,
    Weighted,
}

/// `none`, `fit`, or a fixed positive value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TemperatureMode {
    None,
    Fit,
    Fixed(f64),
}

impl TemperatureMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(TemperatureMode::None),
            "fit" => Ok(TemperatureMode::Fit),
            v => match v.parse::<f64>() {
                Ok(t) if t > 0.0 && t.is_finite() => Ok(TemperatureMode::Fixed(t)),
                _ => Err(Error::arg(
                    "temperature",
                    format!("expected none, fit or a positive number, got `{v}`"),
                )),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Option<Preset>,
    pub seed: u64,

    pub studies: usize,
    pub slices: usize,
    pub classes: usize,
    pub dim: usize,
    pub informative_fraction: f64,
    pub separation: f64,
    pub noise_sigma: f64,
    /// train, val, cal, test
    pub fractions: [f64; 4],
    pub ordinal: bool,

    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub loss: Loss,
    pub hidden: usize,

    pub alpha: f64,
    pub trials: usize,
    pub cal_fraction: f64,
    pub resample: Resample,
    pub level: Level,
    pub agg: AggKind,
    pub mean_logits: bool,
    pub force_nonempty: bool,
    pub temperature: String,
    pub bins: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let (lr, batch, classes, epochs, alpha) = Preset::CifarQ.settings();
        RunConfig {
            preset: None,
            seed: 0,
            studies: 1000,
            slices: 4,
            classes,
            dim: 16,
            informative_fraction: 0.25,
            separation: 4.0,
            noise_sigma: 1.0,
            fractions: [0.7, 0.1, 0.1, 0.1],
            ordinal: false,
            epochs,
            lr,
            batch,
            loss: Loss::CrossEntropySoft,
            hidden: 0,
            alpha,
            trials: 100,
            cal_fraction: 0.5,
            resample: Resample::CalTest,
            level: Level::Instance,
            agg: AggKind::LogitSum,
            mean_logits: false,
            force_nonempty: false,
            temperature: "none".into(),
            bins: crate::postcalib::DEFAULT_BINS,
        }
    }
}

impl RunConfig {
    pub fn apply_preset(&mut self, preset: Preset) {
        let (lr, batch, classes, epochs, alpha) = preset.settings();
        self.preset = Some(preset);
        self.lr = lr;
        self.batch = batch;
        self.classes = classes;
        self.epochs = epochs;
        self.alpha = alpha;
    }

    /// Defaults, then `preset` (if any), then keys from `file_text`.
    pub fn layered(file_text: Option<&str>, preset: Option<Preset>) -> Result<Self> {
        let file: toml::Table = match file_text {
            Some(t) => toml::from_str(t).map_err(|e| Error::arg("config", e.to_string()))?,
            None => toml::Table::new(),
        };
        let file_preset = match file.get("preset") {
            Some(toml::Value::String(s)) => Some(Preset::parse(s)?),
            Some(_) => return Err(Error::arg("config", "`preset` must be a string")),
            None => None,
        };
        let mut base = RunConfig::default();
        if let Some(p) = preset.or(file_preset) {
            base.apply_preset(p);
        }
        let mut table = toml::Table::try_from(&base).map_err(|e| Error::arg("config", e.to_string()))?;
        for (k, v) in file {
            if k == "preset" && preset.is_some() {
                continue;
            }
            table.insert(k, v);
        }
        toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::arg("config", e.to_string()))
    }

    pub fn load(path: Option<&Path>, preset: Option<Preset>) -> Result<Self> {
        let text = match path {
            Some(p) => Some(std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
            None => None,
        };
        Self::layered(text.as_deref(), preset)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn rng_seed(&self) -> RngSeed {
        RngSeed(self.seed)
    }

    pub fn gen_config(&self) -> QuadrantGenConfig {
        QuadrantGenConfig {
            n_studies: self.studies,
            slices_per_study: self.slices,
            num_classes: self.classes,
            dim: self.dim,
            informative_fraction: self.informative_fraction,
            class_separation: self.separation,
            noise_sigma: self.noise_sigma,
            seed: self.rng_seed().derive_named("gen-data", 0),
        }
    }

    pub fn split_seed(&self) -> RngSeed {
        self.rng_seed().derive_named("split", 0)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.lr,
            batch_size: self.batch,
            loss: self.loss,
            seed: self.rng_seed().derive_named("train", 0),
        }
    }

    pub fn trial_config(&self) -> TrialConfig {
        TrialConfig {
            alpha: self.alpha,
            n_trials: self.trials,
            cal_fraction: self.cal_fraction,
            seed: self.rng_seed().derive_named("trials", 0),
            force_nonempty: self.force_nonempty,
        }
    }

    pub fn agg_method(&self) -> AggMethod {
        match (self.agg, self.mean_logits) {
            (AggKind::Weighted, _) => AggMethod::WeightedProb,
            (AggKind::LogitSum, false) => AggMethod::LogitSum,
            (AggKind::LogitSum, true) => AggMethod::LogitMean,
        }
    }

    pub fn temperature_mode(&self) -> Result<TemperatureMode> {
        TemperatureMode::parse(&self.temperature)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_cifar_q_settings() {
        let c = RunConfig::default();
        assert_eq!((c.lr, c.batch, c.classes, c.epochs, c.alpha), (1e-4, 256, 10, 10, 0.05));
    }

    #[test]
    fn file_overrides_preset() {
        let c = RunConfig::layered(Some("preset = \"tmed2\"\nepochs = 30\n"), None).unwrap();
        assert_eq!(c.preset, Some(Preset::Tmed2));
        assert_eq!((c.lr, c.epochs, c.classes, c.alpha), (7e-4, 30, 3, 0.1));
    }

    #[test]
    fn resolved_config_round_trips() {
        let mut c = RunConfig::default();
        c.apply_preset(Preset::AsProtoasnet);
        c.seed = 99;
        c.temperature = "fit".into();
        let back = RunConfig::layered(Some(&c.to_toml()), None).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_toml(), c.to_toml());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::layered(Some("bogus = 1\n"), None).is_err());
    }

    #[test]
    fn temperature_modes() {
        assert_eq!(TemperatureMode::parse("none").unwrap(), TemperatureMode::None);
        assert_eq!(TemperatureMode::parse("fit").unwrap(), TemperatureMode::Fit);
        assert_eq!(TemperatureMode::parse("2.5").unwrap(), TemperatureMode::Fixed(2.5));
        assert!(TemperatureMode::parse("-1").is_err());
    }
}
