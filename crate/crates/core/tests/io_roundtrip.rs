use std::path::Path;

use rt4u::classifier::{HistoryRecord, PredictionHistory};
use rt4u::data::{Label, Split};
use rt4u::io::{
    dataset_from_csv, dataset_to_csv, history_from_jsonl, history_to_jsonl, logits_from_csv, logits_to_csv,
    pseudo_labels_from_csv, pseudo_labels_to_csv, trials_from_csv, trials_to_csv, LogitRow, Provenance,
};
use rt4u::metrics::{median, run_trials, TrialConfig};
use rt4u::rng::RngSeed;
use rt4u::rt4u::form_pseudo_labels;
use rt4u::synthdata::{generate, QuadrantGenConfig};

const P: &str = "mem.csv";

fn awkward_values() -> Vec<f64> {
    vec![
        0.1 + 0.2,
        1.0 / 3.0,
        -2.5e-310,
        1e300,
        f64::MIN_POSITIVE,
        -0.0,
        123456789.12345679,
    ]
}

#[test]
fn dataset_csv_round_trip_is_bit_identical() {
    let cfg = QuadrantGenConfig {
        n_studies: 20,
        dim: 7,
        num_classes: 3,
        ..Default::default()
    };
    let mut d = generate(&cfg).unwrap();
    d.instances[0].features = awkward_values();
    let prov = Provenance::current(5);
    let text = dataset_to_csv(&d, Some(&prov));
    let back = dataset_from_csv(Path::new(P), &text, 3, d.split).unwrap();
    assert_eq!(back.provenance, Some(prov));
    for (a, b) in d.instances.iter().zip(&back.dataset.instances) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.label, b.label);
        assert_eq!(a.informative, b.informative);
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.features), bits(&b.features));
    }
    assert_eq!(dataset_to_csv(&back.dataset, Some(&Provenance::current(5))), text);
}

#[test]
fn logits_csv_round_trip_is_bit_identical() {
    let rows: Vec<LogitRow> = (0..5)
        .map(|i| LogitRow {
            id: format!("x{i}"),
            split: Split::ALL[i % 4],
            logits: rt4u::data::LogitVector::new(awkward_values().into_iter().map(|v| v * (i as f64 + 1.0)).collect())
                .unwrap(),
        })
        .collect();
    let text = logits_to_csv(&rows, Some(&Provenance::current(1)));
    let back = logits_from_csv(Path::new(P), &text).unwrap();
    assert_eq!(back.len(), rows.len());
    for (a, b) in rows.iter().zip(&back) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.split, b.split);
        for (x, y) in a.logits.as_slice().iter().zip(b.logits.as_slice()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}

#[test]
fn history_and_pseudo_labels_round_trip() {
    let recs = (0..4)
        .map(|i| HistoryRecord {
            id: format!("s{i}"),
            epochs: vec![vec![0.1 * i as f64, 1.0 / 3.0, -2.0], vec![0.3, 1e-7, 2.0 + i as f64]],
        })
        .collect();
    let h = PredictionHistory::from_records(recs).unwrap();
    let text = history_to_jsonl(&h);
    let back = history_from_jsonl(Path::new("h.jsonl"), &text).unwrap();
    assert_eq!(back, h);

    let p = form_pseudo_labels(&h).unwrap();
    let csv = pseudo_labels_to_csv(&p, None);
    let pb = pseudo_labels_from_csv(Path::new(P), &csv).unwrap();
    for (id, y) in p.iter() {
        let got = pb.get(id).unwrap();
        for (a, b) in y.as_slice().iter().zip(got.as_slice()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}

#[test]
fn trial_csv_medians_recompute() {
    let probs: Vec<_> = (0..200)
        .map(|i| {
            rt4u::classifier::softmax(
                &rt4u::data::LogitVector::new(vec![(i % 7) as f64 * 0.3, 0.5, -(i % 3) as f64]).unwrap(),
            )
        })
        .collect();
    let labels: Vec<Label> = (0..200).map(|i| Label((i * 7 + i / 3) % 3)).collect();
    let report = run_trials(&probs, &labels, 3, &TrialConfig::new(0.1, 25, RngSeed(4))).unwrap();
    let text = trials_to_csv(&report, Some(&Provenance::current(4)));
    let rows = trials_from_csv(Path::new(P), &text).unwrap();
    assert_eq!(rows.len(), 25);
    let bcov: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let size: Vec<f64> = rows.iter().map(|r| r.2).collect();
    assert_eq!(median(&bcov), report.median_bcov);
    assert_eq!(median(&size), report.median_set_size);
}

#[test]
fn model_json_round_trip_is_bit_identical() {
    let model = rt4u::classifier::init_model(6, 4, 3, RngSeed(9)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    let file = rt4u::io::ModelFile {
        tool_version: "x".into(),
        seed: 9,
        model: model.clone(),
    };
    rt4u::io::write_json(&path, &file).unwrap();
    let back: rt4u::io::ModelFile = rt4u::io::read_json(&path).unwrap();
    let bits = |m: &rt4u::classifier::ModelParams| m.flat_params().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&back.model), bits(&model));
}
