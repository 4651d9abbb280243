use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::train::{train, TrainConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerCell {
    pub hyper_layers: usize,
    pub freq_layers: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerGrid {
    pub hyper_range: Vec<usize>,
    pub freq_range: Vec<usize>,
    /// Row-major over `hyper_range` × `freq_range`.
    pub cells: Vec<LayerCell>,
}

impl LayerGrid {
    pub fn get(&self, hyper_layers: usize, freq_layers: usize) -> Option<f64> {
        self.cells.iter().find(|c| c.hyper_layers == hyper_layers && c.freq_layers == freq_layers).map(|c| c.accuracy)
    }

    /// One `L,K,accuracy` row per cell.
    pub fn to_long_csv(&self) -> String {
        let mut out = String::from("L,K,accuracy\n");
        for c in &self.cells {
            let _ = writeln!(out, "{},{},{}", c.hyper_layers, c.freq_layers, c.accuracy);
        }
        out
    }

    /// Heatmap layout: rows are L, columns are K.
    pub fn to_matrix_csv(&self) -> String {
        let mut out = String::from("L\\K");
        for k in &self.freq_range {
            let _ = write!(out, ",{k}");
        }
        out.push('\n');
        for (row, l) in self.cells.chunks(self.freq_range.len()).zip(&self.hyper_range) {
            let _ = write!(out, "{l}");
            for c in row {
                let _ = write!(out, ",{}", c.accuracy);
            }
            out.push('\n');
        }
        out
    }
}

fn test_accuracy(config: &TrainConfig, dataset: &Dataset) -> Result<f64> {
    let outcome = train(config, dataset)?;
    if outcome.split.test.is_empty() {
        return Err(Error::InvalidConfig("sweep needs a nonempty test split".into()));
    }
    Ok(outcome.evaluate_split(dataset, true)?.accuracy)
}

/// Test accuracy for every `(L, K)` pair, each from an independent run with
/// `base`'s seed.
pub fn sweep_layers(
    base: &TrainConfig,
    dataset: &Dataset,
    hyper_range: &[usize],
    freq_range: &[usize],
) -> Result<LayerGrid> {
    let mut cells = Vec::with_capacity(hyper_range.len() * freq_range.len());
    for &l in hyper_range {
        for &k in freq_range {
            let config = TrainConfig { hyper_layers: l, freq_layers: k, ..base.clone() };
            cells.push(LayerCell { hyper_layers: l, freq_layers: k, accuracy: test_accuracy(&config, dataset)? });
        }
    }
    Ok(LayerGrid { hyper_range: hyper_range.to_vec(), freq_range: freq_range.to_vec(), cells })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleRow {
    pub fraction: f64,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single trial.
    pub std: f64,
    pub accuracies: Vec<f64>,
}

pub fn scale_rows_to_csv(rows: &[ScaleRow]) -> String {
    let mut out = String::from("fraction,mean,std,trials\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.fraction, r.mean, r.std, r.accuracies.len());
    }
    out
}

/// Trial `t` uses seed `base.seed + t`, which also reseeds the split.
pub fn sweep_data_scale(
    base: &TrainConfig,
    dataset: &Dataset,
    fractions: &[f64],
    trials: usize,
) -> Result<Vec<ScaleRow>> {
    if trials == 0 {
        return Err(Error::InvalidConfig("data-scale sweep needs at least one trial".into()));
    }
    fractions
        .iter()
        .map(|&fraction| {
            let accuracies = (0..trials as u64)
                .map(|t| {
                    let config = TrainConfig { subsample_fraction: fraction, seed: base.seed + t, ..base.clone() };
                    test_accuracy(&config, dataset)
                })
                .collect::<Result<Vec<f64>>>()?;
            let n = accuracies.len() as f64;
            let mean = accuracies.iter().sum::<f64>() / n;
            let std = if accuracies.len() < 2 {
                0.0
            } else {
                (accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            };
            Ok(ScaleRow { fraction, mean, std, accuracies })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SynthConfig};
    use crate::encoder::FeatureDims;

    fn setup() -> (TrainConfig, Dataset) {
        let data = generate_synthetic(&SynthConfig {
            students: 2,
            snapshots: 10,
            dims: FeatureDims { emotional: 3, attentional: 2, upper_body: 2 },
            ..Default::default()
        })
        .unwrap();
        let config = TrainConfig {
            epochs: 1,
            hidden: 3,
            learning_rate: 1e-2,
            class_weighting: false,
            eval_each_epoch: false,
            ..Default::default()
        };
        (config, data)
    }

    #[test]
    fn layer_grid_shape_and_files() {
        let (config, data) = setup();
        let grid = sweep_layers(&config, &data, &[1, 2], &[1, 2, 3]).unwrap();
        assert_eq!(grid.cells.len(), 6);
        assert_eq!(grid.to_long_csv().lines().count(), 7);
        assert_eq!(grid.to_matrix_csv().lines().next().unwrap(), "L\\K,1,2,3");
        assert_eq!(grid.to_matrix_csv().lines().count(), 3);
    }

    #[test]
    fn single_cell_equals_plain_run() {
        let (config, data) = setup();
        let grid = sweep_layers(&config, &data, &[3], &[3]).unwrap();
        let plain = train(&config, &data).unwrap().evaluate_split(&data, true).unwrap();
        assert_eq!(grid.get(3, 3), Some(plain.accuracy));
    }

    #[test]
    fn full_fraction_single_trial_equals_plain_run() {
        let (config, data) = setup();
        let rows = sweep_data_scale(&config, &data, &[1.0], 1).unwrap();
        let plain = train(&config, &data).unwrap().evaluate_split(&data, true).unwrap();
        assert_eq!((rows[0].mean, rows[0].std), (plain.accuracy, 0.0));
    }

    #[test]
    fn one_row_per_fraction() {
        let (config, data) = setup();
        let rows = sweep_data_scale(&config, &data, &[0.5, 1.0], 2).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(scale_rows_to_csv(&rows).lines().count(), 3);
        assert!(rows.iter().all(|r| r.accuracies.len() == 2));
    }
}
