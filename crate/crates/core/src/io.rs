//! On-disk formats.
//!
//! All CSV files are UTF-8 with LF line endings and a single header row.
//! Floats use the shortest representation that round-trips exactly. CSV
//! outputs end with a `# tool=<name>/<version> seed=<seed>` comment line;
//! readers skip `#` lines. JSON outputs carry `tool_version` and `seed` fields.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifier::{HistoryRecord, ModelParams, PredictionHistory};
use crate::conformal::{ConformalCalibration, PredictionSet};
use crate::data::{Dataset, Instance, Label, LogitVector, ProbabilityVector, SoftLabel, Split};
use crate::error::{Error, Result};
use crate::metrics::TrialReport;
use crate::postcalib::ReliabilityReport;
use crate::rt4u::PseudoLabelSet;

pub const TOOL_NAME: &str = "rt4u";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub seed: u64,
}

impl Provenance {
    pub fn current(seed: u64) -> Self {
        Provenance {
            tool_version: format!("{TOOL_NAME}/{TOOL_VERSION}"),
            seed,
        }
    }

    fn comment_line(&self) -> String {
        format!("# tool={} seed={}\n", self.tool_version, self.seed)
    }

    fn parse_comment(line: &str) -> Option<Self> {
        let rest = line.strip_prefix("# tool=")?;
        let (tool, seed) = rest.split_once(" seed=")?;
        Some(Provenance {
            tool_version: tool.to_string(),
            seed: seed.trim_end().parse().ok()?,
        })
    }

    fn find_in(text: &str) -> Option<Self> {
        text.lines().rev().find_map(Self::parse_comment)
    }
}

/// Format a float with the shortest exact decimal representation.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new())
}

fn finish_csv(w: csv::Writer<Vec<u8>>, trailer: &str) -> String {
    let bytes = w.into_inner().expect("in-memory csv writer");
    let mut s = String::from_utf8(bytes).expect("csv output is utf-8");
    s.push_str(trailer);
    s
}

fn csv_records(path: &Path, text: &str) -> Result<(csv::StringRecord, Vec<csv::StringRecord>)> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| Error::parse(path, e))?.clone();
    let rows = r
        .records()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::parse(path, e))?;
    Ok((header, rows))
}

fn expect_header(path: &Path, header: &csv::StringRecord, fixed: &[&str], prefix: &str) -> Result<usize> {
    let cols: Vec<&str> = header.iter().collect();
    if cols.len() < fixed.len() || cols[..fixed.len()] != *fixed {
        return Err(Error::parse(
            path,
            format!("header must start with `{}`", fixed.join(",")),
        ));
    }
    for (i, c) in cols[fixed.len()..].iter().enumerate() {
        if *c != format!("{prefix}{i}") {
            return Err(Error::parse(
                path,
                format!("expected column `{prefix}{i}`, found `{c}`"),
            ));
        }
    }
    Ok(cols.len() - fixed.len())
}

fn parse_f64(path: &Path, s: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| Error::parse(path, format!("invalid number `{s}`")))
}

// ---------------------------------------------------------------- datasets

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFile {
    pub dataset: Dataset,
    pub provenance: Option<Provenance>,
}

pub fn dataset_to_csv(d: &Dataset, prov: Option<&Provenance>) -> String {
    let mut w = csv_writer();
    let mut header = vec![
        "id".to_string(),
        "study_id".into(),
        "label".into(),
        "informative".into(),
    ];
    header.extend((0..d.dim()).map(|j| format!("f{j}")));
    w.write_record(&header).expect("in-memory write");
    for inst in &d.instances {
        let mut row = vec![
            inst.id.clone(),
            inst.study_id.clone(),
            inst.label.0.to_string(),
            inst.informative.map_or(String::new(), |b| b.to_string()),
        ];
        row.extend(inst.features.iter().map(|v| fmt_f64(*v)));
        w.write_record(&row).expect("in-memory write");
    }
    finish_csv(w, &prov.map_or(String::new(), Provenance::comment_line))
}

pub fn dataset_from_csv(path: &Path, text: &str, num_classes: usize, split: Split) -> Result<DatasetFile> {
    let (header, rows) = csv_records(path, text)?;
    let dim = expect_header(path, &header, &["id", "study_id", "label", "informative"], "f")?;
    let mut instances = Vec::with_capacity(rows.len());
    for row in rows {
        let label: usize = row[2]
            .parse()
            .map_err(|_| Error::parse(path, format!("invalid label `{}`", &row[2])))?;
        let informative = match &row[3] {
            "" => None,
            "true" => Some(true),
            "false" => Some(false),
            other => return Err(Error::parse(path, format!("invalid informative flag `{other}`"))),
        };
        let features = (0..dim)
            .map(|j| parse_f64(path, &row[4 + j]))
            .collect::<Result<Vec<_>>>()?;
        instances.push(Instance {
            id: row[0].to_string(),
            study_id: row[1].to_string(),
            label: Label(label),
            informative,
            features,
        });
    }
    Ok(DatasetFile {
        dataset: Dataset::new(instances, num_classes, split),
        provenance: Provenance::find_in(text),
    })
}

pub fn read_dataset(path: &Path, num_classes: usize, split: Split) -> Result<Dataset> {
    Ok(dataset_from_csv(path, &read_text(path)?, num_classes, split)?.dataset)
}

pub fn write_dataset(path: &Path, d: &Dataset, prov: &Provenance) -> Result<()> {
    write_text(path, &dataset_to_csv(d, Some(prov)))
}

// ---------------------------------------------------------------- logits

#[derive(Debug, Clone, PartialEq)]
pub struct LogitRow {
    pub id: String,
    pub split: Split,
    pub logits: LogitVector,
}

pub fn logits_to_csv(rows: &[LogitRow], prov: Option<&Provenance>) -> String {
    let k = rows.first().map_or(0, |r| r.logits.len());
    let mut w = csv_writer();
    let mut header = vec!["id".to_string(), "split".into()];
    header.extend((0..k).map(|j| format!("z{j}")));
    w.write_record(&header).expect("in-memory write");
    for r in rows {
        let mut row = vec![r.id.clone(), r.split.to_string()];
        row.extend(r.logits.as_slice().iter().map(|v| fmt_f64(*v)));
        w.write_record(&row).expect("in-memory write");
    }
    finish_csv(w, &prov.map_or(String::new(), Provenance::comment_line))
}

pub fn logits_from_csv(path: &Path, text: &str) -> Result<Vec<LogitRow>> {
    let (header, rows) = csv_records(path, text)?;
    let k = expect_header(path, &header, &["id", "split"], "z")?;
    if k < 2 {
        return Err(Error::parse(path, "logits file needs at least two class columns"));
    }
    rows.iter()
        .map(|row| {
            let z = (0..k)
                .map(|j| parse_f64(path, &row[2 + j]))
                .collect::<Result<Vec<_>>>()?;
            Ok(LogitRow {
                id: row[0].to_string(),
                split: row[1].parse().map_err(|e: Error| Error::parse(path, e))?,
                logits: LogitVector::new(z)?,
            })
        })
        .collect()
}

pub fn read_logits(path: &Path) -> Result<Vec<LogitRow>> {
    logits_from_csv(path, &read_text(path)?)
}

// ---------------------------------------------------------------- history

pub fn history_to_jsonl(h: &PredictionHistory) -> String {
    let mut out = String::new();
    for r in h.records() {
        out.push_str(&serde_json::to_string(r).expect("history record serializes"));
        out.push('\n');
    }
    out
}

pub fn history_from_jsonl(path: &Path, text: &str) -> Result<PredictionHistory> {
    let records = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str::<HistoryRecord>(l).map_err(|e| Error::parse(path, format!("line {}: {e}", n + 1)))
        })
        .collect::<Result<Vec<_>>>()?;
    PredictionHistory::from_records(records)
}

pub fn read_history(path: &Path) -> Result<PredictionHistory> {
    history_from_jsonl(path, &read_text(path)?)
}

// ---------------------------------------------------------------- pseudo-labels

pub fn pseudo_labels_to_csv(p: &PseudoLabelSet, prov: Option<&Provenance>) -> String {
    let mut w = csv_writer();
    let mut header = vec!["id".to_string()];
    header.extend((0..p.num_classes()).map(|j| format!("p{j}")));
    w.write_record(&header).expect("in-memory write");
    for (id, y) in p.iter() {
        let mut row = vec![id.to_string()];
        row.extend(y.as_slice().iter().map(|v| fmt_f64(*v)));
        w.write_record(&row).expect("in-memory write");
    }
    finish_csv(w, &prov.map_or(String::new(), Provenance::comment_line))
}

pub fn pseudo_labels_from_csv(path: &Path, text: &str) -> Result<PseudoLabelSet> {
    let (header, rows) = csv_records(path, text)?;
    let k = expect_header(path, &header, &["id"], "p")?;
    let mut labels = indexmap::IndexMap::with_capacity(rows.len());
    for row in rows {
        let p = (0..k)
            .map(|j| parse_f64(path, &row[1 + j]))
            .collect::<Result<Vec<_>>>()?;
        let p = ProbabilityVector::new(p).map_err(|e| Error::parse(path, format!("{}: {e}", &row[0])))?;
        if labels.insert(row[0].to_string(), SoftLabel(p)).is_some() {
            return Err(Error::parse(path, format!("duplicate id `{}`", &row[0])));
        }
    }
    Ok(PseudoLabelSet::new(labels, 0))
}

// ---------------------------------------------------------------- json artifacts

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFile {
    #[serde(flatten)]
    pub calibration: ConformalCalibration,
    pub tool_version: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub tool_version: String,
    pub seed: u64,
    pub model: ModelParams,
}

pub fn to_json_pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("value serializes");
    s.push('\n');
    s
}

pub fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    write_text(path, &to_json_pretty(v))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Error::parse(path, e))
}

// ---------------------------------------------------------------- reports

pub fn trials_to_csv(r: &TrialReport, prov: Option<&Provenance>) -> String {
    let mut w = csv_writer();
    w.write_record(["trial", "bcov", "mean_set_size"])
        .expect("in-memory write");
    for t in &r.trials {
        w.write_record([t.trial.to_string(), fmt_f64(t.bcov), fmt_f64(t.mean_set_size)])
            .expect("in-memory write");
    }
    finish_csv(w, &prov.map_or(String::new(), Provenance::comment_line))
}

/// Per-trial `(bcov, mean_set_size)` pairs read back from a trial CSV.
pub fn trials_from_csv(path: &Path, text: &str) -> Result<Vec<(usize, f64, f64)>> {
    let (header, rows) = csv_records(path, text)?;
    if header.iter().collect::<Vec<_>>() != ["trial", "bcov", "mean_set_size"] {
        return Err(Error::parse(path, "header must be `trial,bcov,mean_set_size`"));
    }
    rows.iter()
        .map(|r| {
            let t = r[0]
                .parse()
                .map_err(|_| Error::parse(path, format!("invalid trial `{}`", &r[0])))?;
            Ok((t, parse_f64(path, &r[1])?, parse_f64(path, &r[2])?))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMedians {
    pub bcov: f64,
    pub coverage: f64,
    pub mean_set_size: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub medians: TrialMedians,
    pub alpha: f64,
    pub n_trials: usize,
    pub cal_fraction: f64,
    pub resample: String,
    pub seed: u64,
    pub tool_version: String,
}

impl TrialSummary {
    pub fn from_report(r: &TrialReport) -> Self {
        TrialSummary {
            medians: TrialMedians {
                bcov: r.median_bcov,
                coverage: r.median_coverage,
                mean_set_size: r.median_set_size,
            },
            alpha: r.alpha,
            n_trials: r.n_trials,
            cal_fraction: r.cal_fraction,
            resample: r.resample.as_str().to_string(),
            seed: r.seed.0,
            tool_version: Provenance::current(r.seed.0).tool_version,
        }
    }
}

pub fn reliability_to_csv(r: &ReliabilityReport, prov: Option<&Provenance>) -> String {
    let mut w = csv_writer();
    w.write_record(["bin_lo", "bin_hi", "count", "mean_conf", "accuracy"])
        .expect("in-memory write");
    for b in &r.bins {
        w.write_record([
            fmt_f64(b.lo),
            fmt_f64(b.hi),
            b.count.to_string(),
            fmt_f64(b.mean_conf),
            fmt_f64(b.accuracy),
        ])
        .expect("in-memory write");
    }
    let mut trailer = format!("# ece={}\n", fmt_f64(r.ece));
    if let Some(p) = prov {
        trailer.push_str(&p.comment_line());
    }
    finish_csv(w, &trailer)
}

/// Per-instance (or per-study) prediction sets: `id,label,set_size,members`
/// with members joined by `;`.
pub fn sets_to_csv(rows: &[(String, Label, PredictionSet)], prov: Option<&Provenance>) -> String {
    let mut w = csv_writer();
    w.write_record(["id", "label", "set_size", "members"])
        .expect("in-memory write");
    for (id, y, s) in rows {
        let members = s.members.iter().map(usize::to_string).collect::<Vec<_>>().join(";");
        w.write_record([id.clone(), y.0.to_string(), s.len().to_string(), members])
            .expect("in-memory write");
    }
    finish_csv(w, &prov.map_or(String::new(), Provenance::comment_line))
}

/// `id,weight` file used for weighted study aggregation.
pub fn read_weights(path: &Path) -> Result<HashMap<String, f64>> {
    let text = read_text(path)?;
    let (header, rows) = csv_records(path, &text)?;
    if header.iter().collect::<Vec<_>>() != ["id", "weight"] {
        return Err(Error::parse(path, "header must be `id,weight`"));
    }
    rows.iter()
        .map(|r| Ok((r[0].to_string(), parse_f64(path, &r[1])?)))
        .collect()
}
