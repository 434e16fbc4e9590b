//! Synthetic multi-slice studies.
//!
//! Each study has one label and `M` slices. A slice is informative with
//! probability `informative_fraction`: informative slices come from the
//! class-conditional Gaussian, the rest from a single class-independent
//! Gaussian at the centroid of the class means.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Instance, Label, Split};
use crate::error::{Error, Result};
use crate::rng::RngSeed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadrantGenConfig {
    pub n_studies: usize,
    pub slices_per_study: usize,
    pub num_classes: usize,
    pub dim: usize,
    pub informative_fraction: f64,
    pub class_separation: f64,
    pub noise_sigma: f64,
    pub seed: RngSeed,
}

impl Default for QuadrantGenConfig {
    fn default() -> Self {
        QuadrantGenConfig {
            n_studies: 1000,
            slices_per_study: 4,
            num_classes: 10,
            dim: 16,
            informative_fraction: 0.25,
            class_separation: 4.0,
            noise_sigma: 1.0,
            seed: RngSeed(0),
        }
    }
}

impl QuadrantGenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_studies < 1 {
            return Err(Error::arg("studies", "must be >= 1"));
        }
        if self.slices_per_study < 1 {
            return Err(Error::arg("slices", "must be >= 1"));
        }
        if self.num_classes < 2 {
            return Err(Error::arg("classes", "must be >= 2"));
        }
        if self.dim < 1 {
            return Err(Error::arg("dim", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.informative_fraction) {
            return Err(Error::arg("informative-fraction", "must lie in [0, 1]"));
        }
        if !(self.class_separation > 0.0 && self.class_separation.is_finite()) {
            return Err(Error::arg("separation", "must be positive"));
        }
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::arg("noise-sigma", "must be positive"));
        }
        Ok(())
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Class means with minimum pairwise distance `class_separation`.
///
/// With `D >= K` the means are scaled basis vectors, exactly `separation`
/// apart. Otherwise Gaussian directions are drawn and rescaled so the closest
/// pair sits at `separation`.
pub fn class_means(cfg: &QuadrantGenConfig) -> Vec<Vec<f64>> {
    let (k, d, sep) = (cfg.num_classes, cfg.dim, cfg.class_separation);
    if d >= k {
        let r = sep / 2f64.sqrt();
        return (0..k)
            .map(|c| {
                let mut m = vec![0.0; d];
                m[c] = r;
                m
            })
            .collect();
    }
    let mut rng = cfg.seed.derive_named("class-means", 0).rng();
    let raw: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..d).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    let mut min_d = f64::INFINITY;
    for i in 0..k {
        for j in i + 1..k {
            min_d = min_d.min(distance(&raw[i], &raw[j]));
        }
    }
    let scale = sep / min_d;
    raw.into_iter()
        .map(|m| m.into_iter().map(|v| v * scale).collect())
        .collect()
}

pub fn generate(cfg: &QuadrantGenConfig) -> Result<Dataset> {
    cfg.validate()?;
    let means = class_means(cfg);
    let d = cfg.dim;
    let centroid: Vec<f64> = (0..d)
        .map(|j| means.iter().map(|m| m[j]).sum::<f64>() / means.len() as f64)
        .collect();
    let mut rng = cfg.seed.derive_named("studies", 0).rng();
    let mut instances = Vec::with_capacity(cfg.n_studies * cfg.slices_per_study);
    let width = cfg.n_studies.to_string().len().max(4);
    for s in 0..cfg.n_studies {
        let label = rng.random_range(0..cfg.num_classes);
        let study_id = format!("s{s:0width$}");
        for q in 0..cfg.slices_per_study {
            let informative = rng.random::<f64>() < cfg.informative_fraction;
            let center = if informative { &means[label] } else { &centroid };
            let features = center
                .iter()
                .map(|c| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    c + cfg.noise_sigma * z
                })
                .collect();
            instances.push(Instance {
                id: format!("{study_id}_q{q}"),
                features,
                label: Label(label),
                study_id: study_id.clone(),
                informative: Some(informative),
            });
        }
    }
    Ok(Dataset::new(instances, cfg.num_classes, Split::Train))
}

/// Largest-remainder apportionment of `n` items by `fractions`; ties go to
/// the earlier entry.
pub fn apportion(n: usize, fractions: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut sizes: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    sizes
}

/// Study-level split into train/val/cal/test. All slices of a study land in
/// the same split; study order is shuffled with `seed`.
pub fn split(dataset: &Dataset, fractions: [f64; 4], seed: RngSeed) -> Result<[Dataset; 4]> {
    if fractions.iter().any(|f| !(f.is_finite() && *f >= 0.0)) {
        return Err(Error::arg("fractions", "every fraction must be nonnegative"));
    }
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::arg("fractions", format!("must sum to 1, got {sum}")));
    }
    let mut studies: Vec<&str> = Vec::new();
    let mut seen = HashSet::new();
    for inst in &dataset.instances {
        if seen.insert(inst.study_id.as_str()) {
            studies.push(inst.study_id.as_str());
        }
    }
    let sizes = apportion(studies.len(), &fractions);
    for (i, (size, f)) in sizes.iter().zip(&fractions).enumerate() {
        if *size == 0 && *f > 0.0 {
            return Err(Error::arg(
                "fractions",
                format!("{} split would receive zero studies", Split::ALL[i]),
            ));
        }
    }
    let mut shuffled: Vec<usize> = (0..studies.len()).collect();
    shuffled.shuffle(&mut seed.derive_named("split", 0).rng());
    let mut assignment = std::collections::HashMap::with_capacity(studies.len());
    let mut offset = 0;
    for (split_idx, size) in sizes.iter().enumerate() {
        for &s in &shuffled[offset..offset + size] {
            assignment.insert(studies[s], split_idx);
        }
        offset += size;
    }
    let mut parts: [Vec<Instance>; 4] = Default::default();
    for inst in &dataset.instances {
        parts[assignment[inst.study_id.as_str()]].push(inst.clone());
    }
    let [a, b, c, d] = parts;
    Ok([
        Dataset::new(a, dataset.num_classes, Split::Train),
        Dataset::new(b, dataset.num_classes, Split::Val),
        Dataset::new(c, dataset.num_classes, Split::Cal),
        Dataset::new(d, dataset.num_classes, Split::Test),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::validate_dataset;

    fn cfg() -> QuadrantGenConfig {
        QuadrantGenConfig {
            n_studies: 50,
            slices_per_study: 4,
            num_classes: 3,
            dim: 5,
            informative_fraction: 0.5,
            class_separation: 3.0,
            noise_sigma: 1.0,
            seed: RngSeed(11),
        }
    }

    #[test]
    fn generated_data_is_valid_and_grouped() {
        let d = generate(&cfg()).unwrap();
        assert!(validate_dataset(&d).is_empty());
        assert_eq!(d.len(), 200);
        for chunk in d.instances.chunks(4) {
            assert!(chunk
                .iter()
                .all(|i| i.study_id == chunk[0].study_id && i.label == chunk[0].label));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(generate(&cfg()).unwrap(), generate(&cfg()).unwrap());
        let mut other = cfg();
        other.seed = RngSeed(12);
        assert_ne!(generate(&cfg()).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn means_respect_separation() {
        for (k, d) in [(3, 5), (10, 4), (4, 2)] {
            let c = QuadrantGenConfig {
                num_classes: k,
                dim: d,
                ..cfg()
            };
            let m = class_means(&c);
            let mut min_d = f64::INFINITY;
            for i in 0..k {
                for j in i + 1..k {
                    min_d = min_d.min(distance(&m[i], &m[j]));
                }
            }
            assert!(min_d >= c.class_separation - 1e-9, "{k}x{d}: {min_d}");
        }
    }

    #[test]
    fn invalid_config_is_rejected() {
        assert!(generate(&QuadrantGenConfig {
            informative_fraction: 1.5,
            ..cfg()
        })
        .is_err());
        assert!(generate(&QuadrantGenConfig {
            slices_per_study: 0,
            ..cfg()
        })
        .is_err());
        assert!(generate(&QuadrantGenConfig {
            noise_sigma: 0.0,
            ..cfg()
        })
        .is_err());
    }

    #[test]
    fn apportion_largest_remainder() {
        assert_eq!(apportion(1000, &[0.8, 0.1, 0.1, 0.0]), vec![800, 100, 100, 0]);
        assert_eq!(apportion(10, &[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 0.0]), vec![4, 3, 3, 0]);
        assert_eq!(apportion(7, &[0.5, 0.25, 0.25, 0.0]).iter().sum::<usize>(), 7);
    }

    #[test]
    fn split_keeps_studies_together() {
        let d = generate(&cfg()).unwrap();
        let parts = split(&d, [0.6, 0.1, 0.1, 0.2], RngSeed(3)).unwrap();
        let mut owner = std::collections::HashMap::new();
        for (i, p) in parts.iter().enumerate() {
            for inst in &p.instances {
                assert_eq!(*owner.entry(inst.study_id.clone()).or_insert(i), i);
            }
        }
        assert_eq!(parts.iter().map(Dataset::len).sum::<usize>(), d.len());
        assert_eq!(parts[0].len(), 30 * 4);
    }

    #[test]
    fn split_all_train() {
        let d = generate(&cfg()).unwrap();
        let parts = split(&d, [1.0, 0.0, 0.0, 0.0], RngSeed(3)).unwrap();
        assert_eq!(parts[0].len(), d.len());
        assert!(parts[1..].iter().all(Dataset::is_empty));
    }

    #[test]
    fn split_rejects_bad_fractions() {
        let d = generate(&cfg()).unwrap();
        assert!(split(&d, [0.5, 0.1, 0.1, 0.1], RngSeed(3)).is_err());
        assert!(split(&d, [0.999, 0.001, 0.0, 0.0], RngSeed(3)).is_err());
    }
}
