use std::path::Path;
use std::process::{Command, Output};

use rt4u::io::{read_history, read_json, read_logits, CalibrationFile};
use rt4u::pipeline::EvaluationReport;

fn rt4u(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rt4u")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = rt4u(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: [&str; 8] = ["--studies", "200", "--classes", "3", "--dim", "6", "--seed", "3"];

fn gen(dir: &Path, extra: &[&str]) {
    let mut args = vec!["gen-data", "--out", s(dir)];
    args.extend(SMALL);
    args.extend(extra);
    ok(&args);
}

#[test]
fn fractions_not_summing_to_one_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = rt4u(&["gen-data", "--out", s(tmp.path()), "--fractions", "0.5,0.2,0.2,0.2"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--fractions"));
}

#[test]
fn bad_alpha_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = rt4u(&["gen-data", "--out", s(tmp.path()), "--alpha", "1.5"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--alpha"));
}

#[test]
fn missing_input_file_names_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.jsonl");
    let out = rt4u(&[
        "rt4u",
        "--history",
        s(&missing),
        "--pseudo-only",
        "--out",
        s(&tmp.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.jsonl"));
}

#[test]
fn empty_test_split_fails_evaluation() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen(&data, &["--fractions", "0.8,0.2,0,0"]);
    ok(&[
        "train",
        "--data",
        s(&data),
        "--out",
        s(&tmp.path().join("ce")),
        "--epochs",
        "2",
    ]);
    let logits = tmp.path().join("ce/logits.csv");
    let out = rt4u(&[
        "evaluate",
        "--logits",
        s(&logits),
        "--data",
        s(&data),
        "--out",
        s(&tmp.path().join("ev")),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("test split is empty"));
}

#[test]
fn staged_pipeline_produces_consistent_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let ce = tmp.path().join("ce");
    let rt = tmp.path().join("rt");
    gen(&data, &[]);
    let train = ["--epochs", "10", "--lr", "0.05", "--batch", "8"];
    let mut args = vec!["train", "--data", s(&data), "--out", s(&ce)];
    args.extend(train);
    ok(&args);
    let h = read_history(&ce.join("history.jsonl")).unwrap();
    assert_eq!(h.num_epochs(), 10);
    assert!(ce.join("resolved_config.toml").exists());

    // Mismatched --epochs only warns; all history epochs are used.
    let out = ok(&[
        "rt4u",
        "--data",
        s(&data),
        "--history",
        s(&ce.join("history.jsonl")),
        "--out",
        s(&rt),
        "--epochs",
        "4",
        "--lr",
        "0.05",
        "--batch",
        "8",
    ]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
    let pseudo = rt4u::io::pseudo_labels_from_csv(
        &rt.join("pseudo_labels.csv"),
        &std::fs::read_to_string(rt.join("pseudo_labels.csv")).unwrap(),
    )
    .unwrap();
    assert_eq!(pseudo.len(), h.len());
    for (_, p) in pseudo.iter() {
        assert!((p.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    assert!(!read_logits(&rt.join("logits.csv")).unwrap().is_empty());

    let conf = tmp.path().join("conf");
    ok(&[
        "conformal",
        "--logits",
        s(&rt.join("logits.csv")),
        "--data",
        s(&data),
        "--out",
        s(&conf),
        "--alpha",
        "0.2",
        "--trials",
        "10",
        "--force-nonempty",
    ]);
    let cal: CalibrationFile = read_json(&conf.join("calibration.json")).unwrap();
    assert_eq!(cal.calibration.alpha, 0.2);
    let sets = std::fs::read_to_string(conf.join("sets.csv")).unwrap();
    assert!(sets.lines().skip(1).filter(|l| !l.starts_with('#')).all(|l| !l
        .split(',')
        .nth(2)
        .unwrap()
        .starts_with('0')));
    assert!(sets.ends_with('\n') && !sets.contains('\r'));

    let conf_s = tmp.path().join("conf_s");
    ok(&[
        "conformal",
        "--logits",
        s(&rt.join("logits.csv")),
        "--data",
        s(&data),
        "--out",
        s(&conf_s),
        "--level",
        "study",
        "--trials",
        "5",
        "--temperature",
        "fit",
    ]);
    assert!(std::fs::read_to_string(conf_s.join("sets.csv"))
        .unwrap()
        .contains("s00"));

    let ev = tmp.path().join("ev");
    ok(&[
        "evaluate",
        "--logits",
        s(&ce.join("logits.csv")),
        "--data",
        s(&data),
        "--out",
        s(&ev),
        "--trials",
        "5",
        "--temperature",
        "fit",
    ]);
    let report: EvaluationReport = read_json(&ev.join("metrics.json")).unwrap();
    assert!(report.temperature > 0.0);
    assert!((0.0..=1.0).contains(&report.instance.ece));
    assert!(std::fs::read_to_string(ev.join("reliability.csv"))
        .unwrap()
        .contains("# ece="));
}

#[test]
fn mae_loss_and_preset_are_accepted() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen(&data, &["--preset", "tmed2"]);
    ok(&[
        "train",
        "--data",
        s(&data),
        "--out",
        s(&tmp.path().join("m")),
        "--loss",
        "mae",
        "--epochs",
        "2",
    ]);
    let cfg = std::fs::read_to_string(tmp.path().join("m/resolved_config.toml")).unwrap();
    assert!(cfg.contains("loss = \"mae\""));
}

#[test]
fn unknown_flag_value_exits_with_usage_code() {
    let tmp = tempfile::tempdir().unwrap();
    let out = rt4u(&["gen-data", "--out", s(tmp.path()), "--preset", "imagenet"]);
    assert_eq!(out.status.code(), Some(2));
}
