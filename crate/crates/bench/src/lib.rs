//! Shared fixtures for the benchmarks.

use dshgcn::data::{class_weights, generate_synthetic, SynthConfig};
use dshgcn::head::{self, LabeledProbs};
use dshgcn::numerics::Dropout;
use dshgcn::{Ablation, AttentionMode, DsHgcn, FeatureDims, Matrix, ModelConfig, ModelParams, SnapshotInput, Tape};

pub struct Fixture {
    pub model: DsHgcn,
    pub params: ModelParams<Matrix>,
    pub inputs: Vec<SnapshotInput>,
    pub weights: Vec<f64>,
}

impl Fixture {
    /// A seeded model and `snapshots` synthetic snapshots at full feature width.
    pub fn new(students: usize, hidden: usize, snapshots: usize, ablation: Ablation) -> Self {
        let dims = FeatureDims::default();
        let data = generate_synthetic(&SynthConfig { students, snapshots, dims, ..Default::default() })
            .expect("synthetic data");
        let model = DsHgcn::new(ModelConfig {
            dims,
            hidden,
            students,
            max_students: students.max(16),
            classes: 2,
            hyper_layers: 3,
            freq_layers: 3,
            attention: AttentionMode::PerLayer,
            ablation,
        })
        .expect("valid model");
        let params = model.init_params(0);
        let inputs = data.inputs();
        let labels: Vec<usize> = inputs.iter().flat_map(|s| s.labels.iter().copied()).collect();
        let weights = class_weights(&labels, 2).unwrap_or_else(|_| vec![1.0, 1.0]);
        Fixture { model, params, inputs, weights }
    }

    /// Evaluation-mode class probabilities for one snapshot.
    pub fn predict(&self, index: usize) -> Matrix {
        let mut tape = Tape::new();
        let bound = self.model.bind(&mut tape, &self.params);
        let out =
            self.model.forward(&mut tape, &bound, &self.inputs[index], &mut Dropout::disabled()).expect("forward");
        tape.value(out.probs).clone()
    }

    /// Loss and parameter gradients over every snapshot as one batch.
    pub fn loss_and_grads(&self) -> (f64, Vec<Matrix>) {
        let mut tape = Tape::new();
        let bound = self.model.bind(&mut tape, &self.params);
        let mut probs = Vec::with_capacity(self.inputs.len());
        for input in &self.inputs {
            let out = self.model.forward(&mut tape, &bound, input, &mut Dropout::disabled()).expect("forward");
            probs.push(out.probs);
        }
        let batch: Vec<LabeledProbs<'_>> = probs
            .iter()
            .zip(&self.inputs)
            .map(|(&probs, input)| LabeledProbs { probs, labels: &input.labels })
            .collect();
        let vars = bound.param_vars();
        let loss = head::loss(&mut tape, &batch, &self.weights, &vars, 1e-4).expect("loss");
        let grads = tape.backward(loss).expect("backward");
        (tape.value(loss).get(0, 0), vars.iter().map(|&v| grads.wrt(v)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradients_cover_every_parameter() {
        let f = Fixture::new(4, 8, 2, Ablation::None);
        let (loss, grads) = f.loss_and_grads();
        assert!(loss.is_finite() && loss > 0.0);
        assert_eq!(grads.len(), f.params.values().len());
        assert_eq!(f.predict(0).shape(), (4, 2));
    }
}
