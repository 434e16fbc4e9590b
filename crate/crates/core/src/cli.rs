//! `rt4u` command-line interface.
//!
//! Every command resolves its configuration (defaults, preset, `--config`
//! file, flags), writes it to `<out>/resolved_config.toml`, and exchanges
//! data with other stages only through files.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::classifier::{predict_dataset, Loss, ModelParams};
use crate::config::{AggKind, Level, Preset, RunConfig, RESOLVED_CONFIG_FILE};
use crate::data::Split;
use crate::error::{Error, Result};
use crate::io::{self, CalibrationFile, ModelFile, Provenance, TrialSummary};
use crate::metrics::Resample;
use crate::pipeline::{self, LevelPredictions, SplitData, SplitLogits};
use crate::rt4u::{form_pseudo_labels, train_round1, train_round2};
use crate::synthdata::{generate, split};

#[derive(Debug, Parser)]
#[command(
    name = "rt4u",
    version,
    about = "Pseudo-label re-training and conformal prediction sets"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic multi-slice dataset and split it by study.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        opts: Overrides,
    },
    /// Train on one-hot labels, recording the per-epoch prediction history.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        opts: Overrides,
    },
    /// Form pseudo-labels from a prediction history and re-train from scratch.
    Rt4u {
        /// Dataset directory; optional with --pseudo-only.
        #[arg(long)]
        data: Option<PathBuf>,
        /// History JSONL from `train` or an external trainer. Without it,
        /// round 1 is run here.
        #[arg(long)]
        history: Option<PathBuf>,
        /// Only write pseudo-labels, skip round-2 training.
        #[arg(long)]
        pseudo_only: bool,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        opts: Overrides,
    },
    /// Calibrate conformal sets and run the repeated-trial protocol.
    Conformal {
        #[arg(long)]
        logits: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        opts: Overrides,
    },
    /// Headline metrics at instance and study level plus reliability tables.
    Evaluate {
        #[arg(long)]
        logits: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        opts: Overrides,
    },
    /// End to end: generate, train, re-train, and evaluate CE and RT4U with
    /// and without temperature scaling.
    Run {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        opts: Overrides,
    },
}

#[derive(Debug, Default, Args)]
pub struct Overrides {
    /// Key-value config file (e.g. a previous resolved_config.toml).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Experimental-settings preset: cifar-q, tmed2, as-r2plus1d, as-protoasnet.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,

    #[arg(long)]
    pub studies: Option<usize>,
    #[arg(long)]
    pub slices: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub informative_fraction: Option<f64>,
    #[arg(long)]
    pub separation: Option<f64>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    /// Comma-separated train,val,cal,test fractions.
    #[arg(long)]
    pub fractions: Option<String>,
    /// Mark class indices as ordered in the dataset metadata.
    #[arg(long)]
    pub ordinal: bool,

    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// ce or mae
    #[arg(long)]
    pub loss: Option<String>,
    #[arg(long)]
    pub hidden: Option<usize>,

    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub cal_fraction: Option<f64>,
    /// cal or cal+test
    #[arg(long)]
    pub resample: Option<String>,
    /// instance or study
    #[arg(long)]
    pub level: Option<String>,
    /// logit_sum or weighted
    #[arg(long)]
    pub agg: Option<String>,
    /// `id,weight` CSV for weighted aggregation.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub mean_logits: bool,
    #[arg(long)]
    pub force_nonempty: bool,
    /// none, fit, or a fixed value
    #[arg(long)]
    pub temperature: Option<String>,
    #[arg(long)]
    pub bins: Option<usize>,
}

fn parse_fractions(s: &str) -> Result<[f64; 4]> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 4 {
        return Err(Error::arg(
            "fractions",
            format!("expected 4 comma-separated values, got `{s}`"),
        ));
    }
    let mut out = [0.0; 4];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p
            .parse()
            .map_err(|_| Error::arg("fractions", format!("invalid number `{p}`")))?;
    }
    let sum: f64 = out.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::arg("fractions", format!("must sum to 1, got {sum}")));
    }
    Ok(out)
}

impl Overrides {
    pub fn resolve(&self) -> Result<RunConfig> {
        let preset = self.preset.as_deref().map(Preset::parse).transpose()?;
        let mut c = RunConfig::load(self.config.as_deref(), preset)?;
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field.clone() {
                    c.$field = v;
                }
            )*};
        }
        set!(
            seed,
            studies,
            slices,
            classes,
            dim,
            informative_fraction,
            separation,
            noise_sigma
        );
        set!(
            epochs,
            lr,
            batch,
            hidden,
            alpha,
            trials,
            cal_fraction,
            temperature,
            bins
        );
        if let Some(f) = &self.fractions {
            c.fractions = parse_fractions(f)?;
        }
        if let Some(l) = &self.loss {
            c.loss = l.parse::<Loss>()?;
        }
        if let Some(r) = &self.resample {
            c.resample = r.parse::<Resample>()?;
        }
        if let Some(l) = &self.level {
            c.level = match l.as_str() {
                "instance" => Level::Instance,
                "study" => Level::Study,
                other => {
                    return Err(Error::arg(
                        "level",
                        format!("expected instance or study, got `{other}`"),
                    ))
                }
            };
        }
        if let Some(a) = &self.agg {
            c.agg = match a.as_str() {
                "logit_sum" => AggKind::LogitSum,
                "weighted" => AggKind::Weighted,
                other => {
                    return Err(Error::arg(
                        "agg",
                        format!("expected logit_sum or weighted, got `{other}`"),
                    ))
                }
            };
        }
        c.ordinal |= self.ordinal;
        c.mean_logits |= self.mean_logits;
        c.force_nonempty |= self.force_nonempty;
        c.temperature_mode()?;
        crate::conformal::check_alpha(c.alpha)?;
        if c.agg == AggKind::Weighted && self.weights.is_none() {
            return Err(Error::arg("weights", "required with --agg weighted"));
        }
        Ok(c)
    }

    fn weights(&self) -> Result<Option<HashMap<String, f64>>> {
        self.weights.as_deref().map(io::read_weights).transpose()
    }
}

fn write_resolved(out: &Path, cfg: &RunConfig) -> Result<()> {
    io::write_text(&out.join(RESOLVED_CONFIG_FILE), &cfg.to_toml())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { out, opts } => cmd_gen_data(&out, &opts.resolve()?),
        Command::Train { data, out, opts } => cmd_train(&data, &out, &opts.resolve()?),
        Command::Rt4u {
            data,
            history,
            pseudo_only,
            out,
            opts,
        } => cmd_rt4u(data.as_deref(), history.as_deref(), pseudo_only, &out, &opts.resolve()?),
        Command::Conformal {
            logits,
            data,
            out,
            opts,
        } => {
            let cfg = opts.resolve()?;
            cmd_conformal(&logits, &data, &out, &cfg, opts.weights()?.as_ref())
        }
        Command::Evaluate {
            logits,
            data,
            out,
            opts,
        } => {
            let cfg = opts.resolve()?;
            cmd_evaluate(&logits, &data, &out, &cfg, opts.weights()?.as_ref()).map(|_| ())
        }
        Command::Run { out, opts } => cmd_run(&out, &opts.resolve()?),
    }
}

pub fn cmd_gen_data(out: &Path, cfg: &RunConfig) -> Result<()> {
    let parts = split(&generate(&cfg.gen_config())?, cfg.fractions, cfg.split_seed())?;
    let mut data = SplitData::from_parts(parts, cfg.ordinal);
    data.metadata.generator = Some(cfg.gen_config());
    data.metadata.fractions = Some(cfg.fractions);
    data.write(out, &Provenance::current(cfg.seed))?;
    write_resolved(out, cfg)?;
    eprintln!(
        "wrote {} train / {} val / {} cal / {} test instances to {}",
        data.train.len(),
        data.val.len(),
        data.cal.len(),
        data.test.len(),
        out.display()
    );
    Ok(())
}

fn write_model(path: &Path, model: &ModelParams, seed: u64) -> Result<()> {
    io::write_json(
        path,
        &ModelFile {
            tool_version: Provenance::current(seed).tool_version,
            seed,
            model: model.clone(),
        },
    )
}

fn write_logits(path: &Path, model: &ModelParams, data: &SplitData, seed: u64) -> Result<()> {
    let mut logits = SplitLogits::default();
    for s in Split::ALL {
        let z = predict_dataset(model, data.get(s))?;
        match s {
            Split::Train => logits.train = z,
            Split::Val => logits.val = z,
            Split::Cal => logits.cal = z,
            Split::Test => logits.test = z,
        }
    }
    io::write_text(
        path,
        &io::logits_to_csv(&logits.to_rows(data), Some(&Provenance::current(seed))),
    )
}

pub fn cmd_train(data_dir: &Path, out: &Path, cfg: &RunConfig) -> Result<()> {
    let data = SplitData::read(data_dir)?;
    if data.train.is_empty() {
        return Err(Error::InvalidData(format!(
            "{}: train split is empty",
            data_dir.display()
        )));
    }
    let (model, history) = train_round1(&data.train, cfg.hidden, &cfg.train_config())?;
    write_model(&out.join("model.json"), &model, cfg.seed)?;
    io::write_text(&out.join("history.jsonl"), &io::history_to_jsonl(&history))?;
    write_logits(&out.join("logits.csv"), &model, &data, cfg.seed)?;
    write_resolved(out, cfg)?;
    eprintln!("trained {} epochs on {} instances", history.num_epochs(), history.len());
    Ok(())
}

pub fn cmd_rt4u(
    data_dir: Option<&Path>,
    history: Option<&Path>,
    pseudo_only: bool,
    out: &Path,
    cfg: &RunConfig,
) -> Result<()> {
    let prov = Provenance::current(cfg.seed);
    let data = data_dir.map(SplitData::read).transpose()?;
    let history = match (history, &data) {
        (Some(p), _) => io::read_history(p)?,
        (None, Some(d)) => {
            let (_, h) = train_round1(&d.train, cfg.hidden, &cfg.train_config())?;
            io::write_text(&out.join("history_round1.jsonl"), &io::history_to_jsonl(&h))?;
            h
        }
        (None, None) => return Err(Error::arg("data", "either --data or --history is required")),
    };
    if history.num_epochs() != cfg.epochs {
        eprintln!(
            "warning: history has {} epochs but --epochs is {}; all {} history epochs form the pseudo-labels",
            history.num_epochs(),
            cfg.epochs,
            history.num_epochs()
        );
    }
    let pseudo = form_pseudo_labels(&history)?;
    io::write_text(
        &out.join("pseudo_labels.csv"),
        &io::pseudo_labels_to_csv(&pseudo, Some(&prov)),
    )?;
    if !pseudo_only {
        let data = data.ok_or_else(|| Error::arg("data", "required unless --pseudo-only"))?;
        let train_ids: std::collections::HashSet<&str> = data.train.instances.iter().map(|i| i.id.as_str()).collect();
        if pseudo.len() != train_ids.len() || pseudo.iter().any(|(id, _)| !train_ids.contains(id)) {
            return Err(Error::InvalidData(
                "history ids must cover exactly the training instances".into(),
            ));
        }
        let model = train_round2(&data.train, cfg.hidden, &pseudo, &cfg.train_config())?;
        write_model(&out.join("model.json"), &model, cfg.seed)?;
        write_logits(&out.join("logits.csv"), &model, &data, cfg.seed)?;
    }
    write_resolved(out, cfg)?;
    eprintln!("formed {} pseudo-labels from {} epochs", pseudo.len(), pseudo.epochs);
    Ok(())
}

fn load_logits(logits: &Path, data: &SplitData) -> Result<SplitLogits> {
    SplitLogits::from_rows(io::read_logits(logits)?, data)
}

pub fn cmd_conformal(
    logits_path: &Path,
    data_dir: &Path,
    out: &Path,
    cfg: &RunConfig,
    weights: Option<&HashMap<String, f64>>,
) -> Result<()> {
    let data = SplitData::read(data_dir)?;
    let logits = load_logits(logits_path, &data)?;
    let temp = pipeline::resolve_temperature(cfg.temperature_mode()?, &data, &logits)?;
    let scaled = logits.scaled(temp);
    let k = data.metadata.num_classes;
    let method = cfg.agg_method();
    let cal = LevelPredictions::at_level(cfg.level, &data.cal, &scaled.cal, method, weights)?;
    let test = LevelPredictions::at_level(cfg.level, &data.test, &scaled.test, method, weights)?;
    let run = pipeline::conformal_at_level(&cal, &test, k, &cfg.trial_config(), cfg.resample)?;

    let prov = Provenance::current(cfg.seed);
    io::write_json(
        &out.join("calibration.json"),
        &CalibrationFile {
            calibration: run.calibration.clone(),
            tool_version: prov.tool_version.clone(),
            seed: cfg.seed,
        },
    )?;
    let rows: Vec<_> = run
        .test
        .ids
        .iter()
        .zip(&run.test.labels)
        .zip(&run.sets)
        .map(|((id, y), s)| (id.clone(), *y, s.clone()))
        .collect();
    io::write_text(&out.join("sets.csv"), &io::sets_to_csv(&rows, Some(&prov)))?;
    io::write_text(&out.join("trials.csv"), &io::trials_to_csv(&run.trials, Some(&prov)))?;
    io::write_json(&out.join("trials.json"), &TrialSummary::from_report(&run.trials))?;
    write_resolved(out, cfg)?;
    println!(
        "median BCov {:.4}  median |C(x)| {:.3}  over {} trials (alpha {})",
        run.trials.median_bcov, run.trials.median_set_size, run.trials.n_trials, cfg.alpha
    );
    Ok(())
}

pub fn cmd_evaluate(
    logits_path: &Path,
    data_dir: &Path,
    out: &Path,
    cfg: &RunConfig,
    weights: Option<&HashMap<String, f64>>,
) -> Result<pipeline::EvaluationReport> {
    let data = SplitData::read(data_dir)?;
    if data.test.is_empty() {
        return Err(Error::InvalidData(format!(
            "{}: test split is empty",
            data_dir.display()
        )));
    }
    let logits = load_logits(logits_path, &data)?;
    let ev = pipeline::evaluate(&data, &logits, cfg, weights)?;
    let prov = Provenance::current(cfg.seed);
    io::write_json(&out.join("metrics.json"), &ev.report)?;
    io::write_text(
        &out.join("reliability.csv"),
        &io::reliability_to_csv(&ev.reliability_instance, Some(&prov)),
    )?;
    io::write_text(
        &out.join("reliability_study.csv"),
        &io::reliability_to_csv(&ev.reliability_study, Some(&prov)),
    )?;
    write_resolved(out, cfg)?;
    let r = &ev.report;
    println!(
        "instance: BAcc {:.4} BCov {:.4} |C| {:.3} ECE {:.4} | study: BAcc {:.4} BCov {:.4} |C| {:.3}",
        r.instance.bacc,
        r.instance.median_bcov,
        r.instance.median_set_size,
        r.instance.ece,
        r.study.bacc,
        r.study.median_bcov,
        r.study.median_set_size
    );
    Ok(ev.report)
}

#[derive(Debug, Serialize)]
struct RunSummary {
    tool_version: String,
    seed: u64,
    methods: Vec<(String, pipeline::EvaluationReport)>,
}

pub fn cmd_run(out: &Path, cfg: &RunConfig) -> Result<()> {
    let data = out.join("data");
    cmd_gen_data(&data, cfg)?;
    cmd_train(&data, &out.join("ce"), cfg)?;
    cmd_rt4u(
        Some(&data),
        Some(&out.join("ce/history.jsonl")),
        false,
        &out.join("rt4u"),
        cfg,
    )?;
    let mut methods = Vec::new();
    for (name, model_dir, temp) in [
        ("CE", "ce", "none"),
        ("CE+Temp", "ce", "fit"),
        ("CE+RT4U", "rt4u", "none"),
        ("CE+RT4U+Temp", "rt4u", "fit"),
    ] {
        let mut c = cfg.clone();
        c.temperature = temp.to_string();
        let dir = out.join(format!("eval_{}", name.to_lowercase().replace('+', "_")));
        let report = cmd_evaluate(&out.join(model_dir).join("logits.csv"), &data, &dir, &c, None)?;
        methods.push((name.to_string(), report));
    }
    io::write_json(
        &out.join("summary.json"),
        &RunSummary {
            tool_version: Provenance::current(cfg.seed).tool_version,
            seed: cfg.seed,
            methods,
        },
    )?;
    write_resolved(out, cfg)
}
