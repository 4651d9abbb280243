//! Analytic gradients against central finite differences, per parameter group.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{class_weights, generate_synthetic, SynthConfig};
use crate::encoder::FeatureDims;
use crate::error::Result;
use crate::head::{self, LabeledProbs};
use crate::hypergraph::AttentionMode;
use crate::model::{Ablation, DsHgcn, ModelConfig, ModelParams, ParamGroup, SnapshotInput};
use crate::numerics::{Dropout, Matrix, OpKind, Tape};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckConfig {
    pub seed: u64,
    pub students: usize,
    pub hidden: usize,
    pub hyper_layers: usize,
    pub freq_layers: usize,
    pub attention: AttentionMode,
    pub ablation: Ablation,
    pub dims: FeatureDims,
    pub snapshots: usize,
    pub dropout: f64,
    pub lambda: f64,
    pub epsilon: f64,
    pub tolerance: f64,
    /// Deliberately wrong backward rule, to show the check notices.
    pub corrupt: Option<String>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            students: 3,
            hidden: 8,
            hyper_layers: 2,
            freq_layers: 2,
            attention: AttentionMode::PerLayer,
            ablation: Ablation::None,
            dims: FeatureDims { emotional: 6, attentional: 5, upper_body: 4 },
            snapshots: 2,
            dropout: 0.5,
            lambda: 1e-4,
            epsilon: 1e-4,
            tolerance: 1e-4,
            corrupt: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupStatus {
    Pass,
    Fail,
    NotApplicable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupResult {
    pub group: ParamGroup,
    pub status: GroupStatus,
    pub coordinates: usize,
    /// `max |analytic − numeric| / max(1, |numeric|)` over the group.
    pub max_rel_error: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub groups: Vec<GroupResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.status != GroupStatus::Fail)
    }

    pub fn group(&self, group: ParamGroup) -> Option<&GroupResult> {
        self.groups.iter().find(|g| g.group == group)
    }
}

fn applicable(config: &ModelConfig, group: ParamGroup) -> bool {
    let mv = config.ablation.uses_multivariate();
    match group {
        ParamGroup::Attention => mv && config.effective_attention() != AttentionMode::Off,
        ParamGroup::HyperedgeWeights | ParamGroup::HyperTransforms => mv,
        ParamGroup::FreqTransforms => config.ablation.uses_multifrequency(),
        ParamGroup::Encoder | ParamGroup::StudentEmbedding | ParamGroup::Classifier => true,
    }
}

struct Problem {
    model: DsHgcn,
    inputs: Vec<SnapshotInput>,
    weights: Vec<f64>,
    dropout: f64,
    lambda: f64,
    mask_seed: u64,
    corrupt: Option<OpKind>,
}

impl Problem {
    /// Training-mode loss; the dropout stream is reseeded on every call so
    /// each evaluation sees the same masks.
    fn loss(&self, params: &ModelParams<Matrix>, with_grads: bool) -> Result<(f64, Vec<Matrix>)> {
        let mut tape = Tape::new();
        if let Some(kind) = self.corrupt {
            tape.corrupt_rule(kind);
        }
        let bound = self.model.bind(&mut tape, params);
        let mut rng = ChaCha8Rng::seed_from_u64(self.mask_seed);
        let mut probs = Vec::new();
        for input in &self.inputs {
            let mut dropout = Dropout::training(self.dropout, &mut rng);
            probs.push(self.model.forward(&mut tape, &bound, input, &mut dropout)?.probs);
        }
        let batch: Vec<LabeledProbs<'_>> = probs
            .iter()
            .zip(&self.inputs)
            .map(|(&probs, input)| LabeledProbs { probs, labels: &input.labels })
            .collect();
        let vars = bound.param_vars();
        let loss = head::loss(&mut tape, &batch, &self.weights, &vars, self.lambda)?;
        let value = tape.value(loss).get(0, 0);
        if !with_grads {
            return Ok((value, Vec::new()));
        }
        let grads = tape.backward(loss)?;
        Ok((value, vars.iter().map(|&v| grads.wrt(v)).collect()))
    }
}

pub fn gradcheck(config: &GradcheckConfig) -> Result<GradcheckReport> {
    let corrupt = config.corrupt.as_deref().map(str::parse::<OpKind>).transpose()?;
    let data = generate_synthetic(&SynthConfig {
        students: config.students,
        snapshots: config.snapshots,
        classes: 2,
        rho: vec![0.5],
        dims: config.dims,
        seed: config.seed,
        ..Default::default()
    })?;
    let model_config = ModelConfig {
        dims: config.dims,
        hidden: config.hidden,
        students: config.students,
        max_students: config.students,
        classes: 2,
        hyper_layers: config.hyper_layers,
        freq_layers: config.freq_layers,
        attention: config.attention,
        ablation: config.ablation,
    };
    let model = DsHgcn::new(model_config.clone())?;
    let mut params = model.init_params(config.seed);
    let inputs = data.inputs();
    let labels: Vec<usize> = inputs.iter().flat_map(|i| i.labels.iter().copied()).collect();
    let weights = class_weights(&labels, 2).unwrap_or_else(|_| vec![1.0, 1.0]);
    let problem = Problem {
        model,
        inputs,
        weights,
        dropout: config.dropout,
        lambda: config.lambda,
        mask_seed: config.seed.wrapping_add(1),
        corrupt,
    };

    let (_, analytic) = problem.loss(&params, true)?;
    let groups: Vec<ParamGroup> = params.entries().into_iter().map(|(_, g, _)| g).collect();
    let mut results: Vec<GroupResult> = ParamGroup::ALL
        .iter()
        .map(|&group| GroupResult {
            group,
            status: if applicable(&model_config, group) { GroupStatus::Pass } else { GroupStatus::NotApplicable },
            coordinates: 0,
            max_rel_error: None,
        })
        .collect();

    for (tensor, group) in groups.iter().enumerate() {
        let result = results.iter_mut().find(|r| r.group == *group).expect("every group listed");
        if result.status == GroupStatus::NotApplicable {
            continue;
        }
        for k in 0..analytic[tensor].len() {
            let original = params.values()[tensor].data()[k];
            let mut probe = |value: f64| -> Result<f64> {
                params.values_mut()[tensor].data_mut()[k] = value;
                Ok(problem.loss(&params, false)?.0)
            };
            let plus = probe(original + config.epsilon)?;
            let minus = probe(original - config.epsilon)?;
            probe(original)?;
            let numeric = (plus - minus) / (2.0 * config.epsilon);
            let err = (analytic[tensor].data()[k] - numeric).abs() / numeric.abs().max(1.0);
            result.coordinates += 1;
            result.max_rel_error = Some(result.max_rel_error.map_or(err, |m: f64| m.max(err)));
        }
        if result.max_rel_error.is_some_and(|e| e.is_nan() || e > config.tolerance) {
            result.status = GroupStatus::Fail;
        }
    }
    Ok(GradcheckReport { tolerance: config.tolerance, groups: results })
}
