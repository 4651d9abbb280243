use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::metrics::{compute_metrics, MetricsReport};
use crate::data::{class_weights, split, Dataset, DatasetManifest, Split, SplitSpec};
use crate::error::{Error, Result};
use crate::head::{self, LabeledProbs};
use crate::hypergraph::AttentionMode;
use crate::model::{Ablation, DsHgcn, ModelConfig, ModelParams, SnapshotInput};
use crate::numerics::{Dropout, Matrix, Tape};

/// Every knob of a training run. Serialized in full, so a written config
/// reproduces the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Snapshots per optimizer step.
    pub batch_size: usize,
    pub dropout: f64,
    pub lambda: f64,
    pub hyper_layers: usize,
    pub freq_layers: usize,
    pub hidden: usize,
    pub seed: u64,
    pub attention_enabled: bool,
    /// Recompute attention from each layer's input; otherwise once from the
    /// encoded features.
    pub attention_per_layer: bool,
    pub ablation: Ablation,
    /// Rows of the student embedding table.
    pub max_students: usize,
    pub train_fraction: f64,
    pub subsample_fraction: f64,
    /// Inverse-frequency class weights in the loss.
    pub class_weighting: bool,
    /// Evaluate the test split after every epoch (the log's `test_acc`).
    pub eval_each_epoch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            epochs: 200,
            batch_size: 8,
            dropout: 0.5,
            lambda: 1e-4,
            hyper_layers: 3,
            freq_layers: 3,
            hidden: 64,
            seed: 0,
            attention_enabled: true,
            attention_per_layer: true,
            ablation: Ablation::None,
            max_students: 16,
            train_fraction: 0.8,
            subsample_fraction: 1.0,
            class_weighting: true,
            eval_each_epoch: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: String| if ok { Ok(()) } else { Err(Error::InvalidConfig(msg)) };
        check(
            self.learning_rate > 0.0 && self.learning_rate.is_finite(),
            format!("learning_rate must be positive, got {}", self.learning_rate),
        )?;
        check((0.0..1.0).contains(&self.dropout), format!("dropout must lie in [0, 1), got {}", self.dropout))?;
        check(
            self.lambda >= 0.0 && self.lambda.is_finite(),
            format!("lambda must be non-negative, got {}", self.lambda),
        )?;
        check(self.epochs >= 1, "epochs must be at least 1".into())?;
        check(self.batch_size >= 1, "batch_size must be at least 1".into())?;
        check(self.hyper_layers >= 1 && self.freq_layers >= 1, "layer counts must be at least 1".into())?;
        check(self.hidden >= 1, "hidden must be at least 1".into())
    }

    pub fn attention_mode(&self) -> AttentionMode {
        match (self.attention_enabled, self.attention_per_layer) {
            (false, _) => AttentionMode::Off,
            (true, true) => AttentionMode::PerLayer,
            (true, false) => AttentionMode::Once,
        }
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec { train_fraction: self.train_fraction, seed: self.seed, subsample_fraction: self.subsample_fraction }
    }

    pub fn model_config(&self, manifest: &DatasetManifest) -> ModelConfig {
        ModelConfig {
            dims: manifest.dims(),
            hidden: self.hidden,
            students: manifest.students_per_snapshot,
            max_students: self.max_students,
            classes: manifest.n_classes,
            hyper_layers: self.hyper_layers,
            freq_layers: self.freq_layers,
            attention: self.attention_mode(),
            ablation: self.ablation,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-student loss (including the L2 term) over the epoch's batches.
    pub train_loss: f64,
    /// Accuracy of the training-mode predictions made during the epoch.
    pub train_acc: f64,
    pub test_acc: Option<f64>,
}

pub struct TrainOutcome {
    pub model: DsHgcn,
    pub params: ModelParams<Matrix>,
    pub log: Vec<EpochLog>,
    pub split: Split,
    pub class_weights: Vec<f64>,
}

impl TrainOutcome {
    pub fn evaluate_split(&self, dataset: &Dataset, test: bool) -> Result<MetricsReport> {
        let ids = if test { &self.split.test } else { &self.split.train };
        let inputs: Vec<SnapshotInput> = ids.iter().map(|&i| dataset.snapshots[i].to_input()).collect();
        evaluate(&self.model, &self.params, &inputs)
    }
}

pub fn train(config: &TrainConfig, dataset: &Dataset) -> Result<TrainOutcome> {
    train_with(config, dataset, |_| {})
}

/// [`train`] with a callback after each epoch.
pub fn train_with(
    config: &TrainConfig,
    dataset: &Dataset,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    config.validate()?;
    dataset.validate()?;
    let split = split(dataset.snapshots.len(), &config.split_spec())?;
    if split.train.is_empty() {
        return Err(Error::EmptyTrainingSplit);
    }
    let inputs = dataset.inputs();
    let train_labels: Vec<usize> = split.train.iter().flat_map(|&i| inputs[i].labels.iter().copied()).collect();
    let classes = dataset.manifest.n_classes;
    let weights = if config.class_weighting { class_weights(&train_labels, classes)? } else { vec![1.0; classes] };

    let model = DsHgcn::new(config.model_config(&dataset.manifest))?;
    let mut params = model.init_params(config.seed);
    let mut adam = Adam::new(config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(2);
    let test_inputs: Vec<SnapshotInput> = split.test.iter().map(|&i| inputs[i].clone()).collect();

    let mut order = split.train.clone();
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        for batch in order.chunks(config.batch_size) {
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape, &params);
            let mut outputs = Vec::with_capacity(batch.len());
            for &i in batch {
                let mut dropout = Dropout::training(config.dropout, &mut rng);
                let out = model.forward(&mut tape, &bound, &inputs[i], &mut dropout)?;
                outputs.push((out.probs, i));
            }
            let labeled: Vec<LabeledProbs<'_>> =
                outputs.iter().map(|&(probs, i)| LabeledProbs { probs, labels: &inputs[i].labels }).collect();
            let param_vars = bound.param_vars();
            let loss = head::loss(&mut tape, &labeled, &weights, &param_vars, config.lambda)?;
            let students: usize = labeled.iter().map(|l| l.labels.len()).sum();
            loss_sum += tape.value(loss).get(0, 0) * students as f64;
            for item in &labeled {
                let predicted = head::predict(tape.value(item.probs));
                correct += predicted.iter().zip(item.labels).filter(|(p, y)| p == y).count();
            }
            seen += students;

            let grads = tape.backward(loss)?;
            let grads: Vec<Matrix> = param_vars.iter().map(|&v| grads.wrt(v)).collect();
            adam.step(&mut params.values_mut(), &grads)?;
        }
        let test_acc = if config.eval_each_epoch && !test_inputs.is_empty() {
            Some(evaluate(&model, &params, &test_inputs)?.accuracy)
        } else {
            None
        };
        let entry =
            EpochLog { epoch, train_loss: loss_sum / seen as f64, train_acc: correct as f64 / seen as f64, test_acc };
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(TrainOutcome { model, params, log, split, class_weights: weights })
}

/// Evaluation-mode metrics over every student of every snapshot.
pub fn evaluate(model: &DsHgcn, params: &ModelParams<Matrix>, snapshots: &[SnapshotInput]) -> Result<MetricsReport> {
    model.check_params(params)?;
    let mut probs = Vec::new();
    let mut labels = Vec::new();
    for s in snapshots {
        let p = model.predict_proba(params, s)?;
        probs.extend((0..p.rows()).map(|r| p.row(r).to_vec()));
        labels.extend_from_slice(&s.labels);
    }
    compute_metrics(&probs, &labels, model.config().classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SynthConfig};
    use crate::encoder::FeatureDims;

    fn tiny_data() -> Dataset {
        generate_synthetic(&SynthConfig {
            students: 3,
            snapshots: 6,
            dims: FeatureDims { emotional: 4, attentional: 3, upper_body: 2 },
            seed: 5,
            ..Default::default()
        })
        .unwrap()
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            learning_rate: 1e-2,
            epochs: 3,
            batch_size: 2,
            hidden: 4,
            hyper_layers: 2,
            freq_layers: 2,
            class_weighting: false,
            ..Default::default()
        }
    }

    #[test]
    fn training_is_deterministic() {
        let (a, b) = (train(&tiny_config(), &tiny_data()).unwrap(), train(&tiny_config(), &tiny_data()).unwrap());
        assert_eq!(a.params, b.params);
        assert_eq!(a.log, b.log);
        assert_eq!(a.log.len(), 3);
    }

    #[test]
    fn every_ablation_trains() {
        for ablation in Ablation::ALL {
            let out = train(&TrainConfig { ablation, epochs: 1, ..tiny_config() }, &tiny_data()).unwrap();
            assert!(out.log[0].train_loss.is_finite(), "{ablation}");
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let data = tiny_data();
        for bad in [
            TrainConfig { learning_rate: 0.0, ..tiny_config() },
            TrainConfig { dropout: 1.0, ..tiny_config() },
            TrainConfig { hyper_layers: 0, ..tiny_config() },
        ] {
            assert!(matches!(train(&bad, &data), Err(Error::InvalidConfig(_))));
        }
    }

    #[test]
    fn default_recipe() {
        let c = TrainConfig::default();
        assert_eq!((c.learning_rate, c.dropout, c.hyper_layers, c.freq_layers), (1e-5, 0.5, 3, 3));
        assert_eq!((c.epochs, c.batch_size, c.hidden, c.lambda), (200, 8, 64, 1e-4));
    }

    #[test]
    fn config_round_trips_through_json() {
        let c = TrainConfig { ablation: Ablation::DropEmotional, ..tiny_config() };
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<TrainConfig>(&text).unwrap(), c);
        let partial: TrainConfig = serde_json::from_str(r#"{"epochs": 7}"#).unwrap();
        assert_eq!(partial, TrainConfig { epochs: 7, ..Default::default() });
        assert!(serde_json::from_str::<TrainConfig>(r#"{"epoch": 7}"#).is_err());
    }
}
