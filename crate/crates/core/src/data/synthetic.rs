//! Planted-contagion classrooms.
//!
//! Each snapshot draws a group mood `m`, each student a base engagement `b_i`,
//! and `z_i = (1−ρ)·b_i + ρ·m`. Labels are quantile bins of `z` under its
//! marginal `N(0, (1−ρ)² + ρ²)`. Every feature type reads out
//! `(z_i + s_i)·u_t + (b_i − m)·h_t + Σ g·v_t + σ_n·ε`, where `s_i` is a
//! per-student style offset shared by all three types, `h_t` is the
//! deviation channel and `v_t` are distractor directions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::format::{default_label_names, Dataset, DatasetManifest, FeatureSnapshot, StudentRecord};
use crate::encoder::{FeatureDims, FeatureKind};
use crate::error::{Error, Result};

const MAX_DISTRACTORS: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub students: usize,
    pub snapshots: usize,
    pub classes: usize,
    /// Contagion strengths; each snapshot draws one uniformly. A single entry
    /// gives a homogeneous dataset.
    pub rho: Vec<f64>,
    pub noise: f64,
    /// Standard deviation of the per-student style offset.
    pub style: f64,
    pub dims: FeatureDims,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            students: 6,
            snapshots: 100,
            classes: 2,
            rho: vec![0.7],
            noise: 0.3,
            style: 0.5,
            dims: FeatureDims::default(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.students == 0 || self.snapshots == 0 {
            return bad("students and snapshots must be at least 1".into());
        }
        if self.classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.rho.is_empty() || self.rho.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return bad(format!("contagion strengths must lie in [0, 1], got {:?}", self.rho));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) || !(self.style >= 0.0 && self.style.is_finite()) {
            return bad("noise and style must be finite and non-negative".into());
        }
        if FeatureKind::ALL.iter().any(|k| self.dims.get(*k) == 0) {
            return bad("feature dimensions must be at least 1".into());
        }
        Ok(())
    }
}

/// Orthonormal readout directions for one feature type: signal first, then
/// the deviation channel, then distractors, as many as the dimension allows.
fn readout_basis(dim: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let wanted = (2 + MAX_DISTRACTORS).min(dim);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(wanted);
    while basis.len() < wanted {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    basis
}

fn gauss(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Upper bin edges `σ·Φ⁻¹(k/C)` for `k = 1..C`.
fn thresholds(classes: usize, sigma: f64) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    (1..classes).map(|k| sigma * normal.inverse_cdf(k as f64 / classes as f64)).collect()
}

pub fn generate_synthetic(config: &SynthConfig) -> Result<Dataset> {
    config.validate()?;
    let mut basis_rng = ChaCha8Rng::seed_from_u64(config.seed);
    basis_rng.set_stream(1);
    let bases: Vec<Vec<Vec<f64>>> =
        FeatureKind::ALL.iter().map(|k| readout_basis(config.dims.get(*k), &mut basis_rng)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.students;
    let mut snapshots = Vec::with_capacity(config.snapshots);
    for s in 0..config.snapshots {
        let rho = if config.rho.len() == 1 { config.rho[0] } else { config.rho[rng.random_range(0..config.rho.len())] };
        let edges = thresholds(config.classes, ((1.0 - rho).powi(2) + rho * rho).sqrt());
        let mood = gauss(&mut rng);
        let mut students = Vec::with_capacity(n);
        for index in 0..n {
            let base = gauss(&mut rng);
            let style = config.style * gauss(&mut rng);
            let z = (1.0 - rho) * base + rho * mood;
            let label = edges.iter().filter(|&&e| z > e).count();
            let mut vectors = FeatureKind::ALL.iter().zip(&bases).map(|(kind, basis)| {
                let dim = config.dims.get(*kind);
                let mut x: Vec<f64> = (0..dim).map(|_| config.noise * gauss(&mut rng)).collect();
                let mut add = |dir: &[f64], coef: f64| x.iter_mut().zip(dir).for_each(|(xi, d)| *xi += coef * d);
                add(&basis[0], z + style);
                if let Some(h) = basis.get(1) {
                    add(h, base - mood);
                }
                for v in basis.iter().skip(2) {
                    add(v, gauss(&mut rng));
                }
                x
            });
            let (emotional, attentional, upper_body) =
                (vectors.next().unwrap(), vectors.next().unwrap(), vectors.next().unwrap());
            students.push(StudentRecord { index, emotional, attentional, upper_body, label });
        }
        snapshots.push(FeatureSnapshot { snapshot_id: format!("s{s:05}"), students });
    }
    let dataset = Dataset {
        manifest: DatasetManifest {
            d_e: config.dims.emotional,
            d_a: config.dims.attentional,
            d_u: config.dims.upper_body,
            n_classes: config.classes,
            snapshots: config.snapshots,
            students_per_snapshot: n,
            seed: config.seed,
            label_names: default_label_names(config.classes),
        },
        snapshots,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Mean over snapshots of the fraction of students sharing the snapshot's
/// most common label.
pub fn label_agreement(dataset: &Dataset) -> f64 {
    let c = dataset.manifest.n_classes;
    let total: f64 = dataset
        .snapshots
        .iter()
        .map(|snap| {
            let mut counts = vec![0usize; c];
            snap.students.iter().for_each(|s| counts[s.label] += 1);
            *counts.iter().max().unwrap() as f64 / snap.students.len() as f64
        })
        .sum();
    total / dataset.snapshots.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(rho: f64, seed: u64) -> SynthConfig {
        SynthConfig {
            snapshots: 50,
            rho: vec![rho],
            dims: FeatureDims { emotional: 8, attentional: 4, upper_body: 2 },
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_given_seed() {
        assert_eq!(generate_synthetic(&small(0.7, 3)).unwrap(), generate_synthetic(&small(0.7, 3)).unwrap());
        assert_ne!(generate_synthetic(&small(0.7, 3)).unwrap(), generate_synthetic(&small(0.7, 4)).unwrap());
    }

    #[test]
    fn full_contagion_gives_single_label_snapshots() {
        for classes in [2, 3] {
            let ds = generate_synthetic(&SynthConfig { classes, ..small(1.0, 0) }).unwrap();
            assert!(ds.snapshots.iter().all(|s| s.students.iter().all(|x| x.label == s.students[0].label)));
        }
    }

    #[test]
    fn quantile_bins_are_roughly_balanced() {
        let ds = generate_synthetic(&SynthConfig { snapshots: 400, classes: 3, ..small(0.3, 1) }).unwrap();
        let counts = ds.label_counts();
        let total: usize = counts.iter().sum();
        for c in counts {
            assert!((c as f64 / total as f64 - 1.0 / 3.0).abs() < 0.05, "{c}/{total}");
        }
    }

    #[test]
    fn thresholds_split_the_marginal_evenly() {
        let t = thresholds(2, 1.0);
        assert_eq!(t.len(), 1);
        assert!(t[0].abs() < 1e-12);
        let t = thresholds(3, 2.0);
        assert!((t[0] + t[1]).abs() < 1e-9 && t[0] < 0.0);
    }

    #[test]
    fn one_dimensional_types_carry_only_the_signal() {
        let cfg = SynthConfig { dims: FeatureDims { emotional: 1, attentional: 2, upper_body: 3 }, ..small(0.5, 0) };
        let ds = generate_synthetic(&cfg).unwrap();
        assert_eq!(ds.snapshots[0].students[0].emotional.len(), 1);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(generate_synthetic(&SynthConfig { rho: vec![1.5], ..small(0.0, 0) }).is_err());
        assert!(generate_synthetic(&SynthConfig { classes: 1, ..small(0.0, 0) }).is_err());
        assert!(generate_synthetic(&SynthConfig { students: 0, ..small(0.0, 0) }).is_err());
        assert!(generate_synthetic(&SynthConfig { rho: vec![], ..small(0.0, 0) }).is_err());
    }
}
