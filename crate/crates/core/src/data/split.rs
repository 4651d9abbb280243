use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    /// Fraction of the training side kept, applied after the split.
    pub subsample_fraction: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { train_fraction: 0.8, seed: 0, subsample_fraction: 1.0 }
    }
}

/// Snapshot indices on each side of a split, both sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle of `0..n_snapshots`, cut at `round(train_fraction · n)`.
/// Subsampling keeps a prefix of the shuffled training side.
pub fn split(n_snapshots: usize, spec: &SplitSpec) -> Result<Split> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!("train_fraction must lie in (0, 1), got {}", spec.train_fraction)));
    }
    if !(spec.subsample_fraction > 0.0 && spec.subsample_fraction <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "subsample_fraction must lie in (0, 1], got {}",
            spec.subsample_fraction
        )));
    }
    let mut order: Vec<usize> = (0..n_snapshots).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let n_train = (spec.train_fraction * n_snapshots as f64).round() as usize;
    let (train, test) = order.split_at(n_train.min(n_snapshots));
    let kept = (spec.subsample_fraction * train.len() as f64).round() as usize;
    let mut train = train[..kept.min(train.len())].to_vec();
    let mut test = test.to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}

/// Inverse-frequency weights normalized to mean 1 over the classes.
pub fn class_weights(labels: &[usize], n_classes: usize) -> Result<Vec<f64>> {
    let mut counts = vec![0usize; n_classes];
    for &y in labels {
        if y >= n_classes {
            return Err(Error::IndexOutOfRange { what: "label", index: y, len: n_classes });
        }
        counts[y] += 1;
    }
    if let Some(absent) = counts.iter().position(|c| *c == 0) {
        return Err(Error::AbsentClass(absent));
    }
    let inv: Vec<f64> = counts.iter().map(|c| 1.0 / *c as f64).collect();
    let mean = inv.iter().sum::<f64>() / n_classes as f64;
    Ok(inv.iter().map(|w| w / mean).collect())
}
