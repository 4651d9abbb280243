//! The assembled dual-stream network: encoder, hypergraph stream, frequency
//! stream, and classifier head, with ablation switches.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{self, EncoderInput, EncoderParams, FeatureDims, FeatureKind};
use crate::error::{Error, Result};
use crate::frequency::{self, BoundPairGraph, FreqParams, PairGraphTopology};
use crate::head::{self, HeadParams};
use crate::hypergraph::{self, AttentionMode, BoundHypergraph, HyperParams, HypergraphTopology};
use crate::numerics::{Dropout, Matrix, Tape, Var};

/// Model variants with one mechanism removed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    None,
    NoMultivariate,
    NoMultifrequency,
    DropAttentional,
    DropUpperBody,
    DropEmotional,
    NoAttention,
    /// Both propagation streams removed: the head sees the encoded features.
    EncoderOnly,
}

impl Ablation {
    pub const ALL: [Ablation; 8] = [
        Ablation::None,
        Ablation::NoMultivariate,
        Ablation::NoMultifrequency,
        Ablation::DropAttentional,
        Ablation::DropUpperBody,
        Ablation::DropEmotional,
        Ablation::NoAttention,
        Ablation::EncoderOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::NoMultivariate => "no_multivariate",
            Ablation::NoMultifrequency => "no_multifrequency",
            Ablation::DropAttentional => "drop_attentional",
            Ablation::DropUpperBody => "drop_upper_body",
            Ablation::DropEmotional => "drop_emotional",
            Ablation::NoAttention => "no_attention",
            Ablation::EncoderOnly => "encoder_only",
        }
    }

    /// Position of the variant in ablation reports (1–6). The full model and
    /// the encoder-only baseline have none.
    pub fn report_order(self) -> Option<usize> {
        match self {
            Ablation::NoMultivariate => Some(1),
            Ablation::NoMultifrequency => Some(2),
            Ablation::DropAttentional => Some(3),
            Ablation::DropUpperBody => Some(4),
            Ablation::DropEmotional => Some(5),
            Ablation::NoAttention => Some(6),
            Ablation::None | Ablation::EncoderOnly => None,
        }
    }

    pub fn dropped_feature(self) -> Option<FeatureKind> {
        match self {
            Ablation::DropEmotional => Some(FeatureKind::Emotional),
            Ablation::DropAttentional => Some(FeatureKind::Attentional),
            Ablation::DropUpperBody => Some(FeatureKind::UpperBody),
            _ => None,
        }
    }

    pub fn uses_multivariate(self) -> bool {
        !matches!(self, Ablation::NoMultivariate | Ablation::EncoderOnly)
    }

    pub fn uses_multifrequency(self) -> bool {
        !matches!(self, Ablation::NoMultifrequency | Ablation::EncoderOnly)
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| {
            let names: Vec<_> = Ablation::ALL.iter().map(|a| a.name()).collect();
            Error::InvalidConfig(format!("unknown ablation {s:?}, expected one of {}", names.join(", ")))
        })
    }
}

/// Everything that fixes the parameter shapes and the forward computation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dims: FeatureDims,
    pub hidden: usize,
    pub students: usize,
    pub max_students: usize,
    pub classes: usize,
    pub hyper_layers: usize,
    pub freq_layers: usize,
    pub attention: AttentionMode,
    pub ablation: Ablation,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(Error::InvalidConfig(msg.to_string())) };
        check(self.hidden >= 1, "hidden width must be at least 1")?;
        check(self.students >= 1, "need at least one student")?;
        check(self.students <= self.max_students, "students per snapshot exceed the embedding table size")?;
        check(self.classes >= 2, "need at least two classes")?;
        check(self.hyper_layers >= 1, "hypergraph layer count must be at least 1")?;
        check(self.freq_layers >= 1, "graph layer count must be at least 1")?;
        check(FeatureKind::ALL.iter().all(|k| self.dims.get(*k) >= 1), "feature widths must be at least 1")
    }

    pub fn effective_attention(&self) -> AttentionMode {
        if self.ablation == Ablation::NoAttention {
            AttentionMode::Off
        } else {
            self.attention
        }
    }

    /// Width of the fused per-student vector.
    pub fn fused_width(&self) -> usize {
        let streams = match self.ablation {
            Ablation::NoMultivariate | Ablation::NoMultifrequency | Ablation::EncoderOnly => 1,
            _ => 2,
        };
        3 * streams * self.hidden
    }
}

/// Parameter groups, as reported by gradient checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Encoder,
    StudentEmbedding,
    HyperedgeWeights,
    Attention,
    HyperTransforms,
    FreqTransforms,
    Classifier,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 7] = [
        ParamGroup::Encoder,
        ParamGroup::StudentEmbedding,
        ParamGroup::HyperedgeWeights,
        ParamGroup::Attention,
        ParamGroup::HyperTransforms,
        ParamGroup::FreqTransforms,
        ParamGroup::Classifier,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Encoder => "encoder",
            ParamGroup::StudentEmbedding => "student_embedding",
            ParamGroup::HyperedgeWeights => "hyperedge_weights",
            ParamGroup::Attention => "attention",
            ParamGroup::HyperTransforms => "hyper_transforms",
            ParamGroup::FreqTransforms => "freq_transforms",
            ParamGroup::Classifier => "classifier",
        }
    }
}

/// All trainable tensors. `T` is `Matrix` for stored values and `Var` once
/// bound to a tape.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub encoder: EncoderParams<T>,
    pub hyper: HyperParams<T>,
    pub freq: FreqParams<T>,
    pub head: HeadParams<T>,
}

impl<T> ModelParams<T> {
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> ModelParams<U> {
        ModelParams {
            encoder: self.encoder.map(&mut f),
            hyper: self.hyper.map(&mut f),
            freq: self.freq.map(&mut f),
            head: self.head.map(&mut f),
        }
    }

    /// Every tensor with its name and group, in a fixed order.
    pub fn entries(&self) -> Vec<(String, ParamGroup, &T)> {
        let mut out = Vec::new();
        for kind in FeatureKind::ALL {
            let p = self.encoder.projection(kind);
            out.push((format!("encoder.{}.weight", kind.name()), ParamGroup::Encoder, &p.weight));
            out.push((format!("encoder.{}.bias", kind.name()), ParamGroup::Encoder, &p.bias));
        }
        out.push(("encoder.student_embedding".into(), ParamGroup::StudentEmbedding, &self.encoder.student_embedding));
        out.push(("hyper.edge_weights".into(), ParamGroup::HyperedgeWeights, &self.hyper.edge_weights));
        out.push(("hyper.attention".into(), ParamGroup::Attention, &self.hyper.attention));
        for (l, p) in self.hyper.transforms.iter().enumerate() {
            out.push((format!("hyper.transform.{l}"), ParamGroup::HyperTransforms, p));
        }
        for (k, (lo, hi)) in self.freq.low.iter().zip(&self.freq.high).enumerate() {
            out.push((format!("freq.low.{k}"), ParamGroup::FreqTransforms, lo));
            out.push((format!("freq.high.{k}"), ParamGroup::FreqTransforms, hi));
        }
        out.push(("head.weight".into(), ParamGroup::Classifier, &self.head.weight));
        out.push(("head.bias".into(), ParamGroup::Classifier, &self.head.bias));
        out
    }

    pub fn values(&self) -> Vec<&T> {
        self.entries().into_iter().map(|(_, _, v)| v).collect()
    }
}

impl ModelParams<Matrix> {
    /// Mutable access in the same order as [`ModelParams::entries`].
    pub fn values_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = Vec::new();
        let enc = &mut self.encoder;
        for p in [&mut enc.emotional, &mut enc.attentional, &mut enc.upper_body] {
            out.push(&mut p.weight);
            out.push(&mut p.bias);
        }
        out.push(&mut enc.student_embedding);
        out.push(&mut self.hyper.edge_weights);
        out.push(&mut self.hyper.attention);
        out.extend(self.hyper.transforms.iter_mut());
        for (lo, hi) in self.freq.low.iter_mut().zip(self.freq.high.iter_mut()) {
            out.push(lo);
            out.push(hi);
        }
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    pub fn count(&self) -> usize {
        self.values().iter().map(|m| m.len()).sum()
    }

    pub fn squared_norm(&self) -> f64 {
        self.values().iter().map(|m| m.sum_squares()).sum()
    }
}

/// One classroom snapshot as dense model input.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotInput {
    /// `N × d_e`
    pub emotional: Matrix,
    /// `N × d_a`
    pub attentional: Matrix,
    /// `N × d_u`
    pub upper_body: Matrix,
    /// Embedding-table row of each student.
    pub students: Vec<usize>,
    pub labels: Vec<usize>,
}

impl SnapshotInput {
    pub fn n_students(&self) -> usize {
        self.students.len()
    }

    pub fn features(&self, kind: FeatureKind) -> &Matrix {
        match kind {
            FeatureKind::Emotional => &self.emotional,
            FeatureKind::Attentional => &self.attentional,
            FeatureKind::UpperBody => &self.upper_body,
        }
    }

    /// Reorders students: row `i` of the result is row `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Result<SnapshotInput> {
        Ok(SnapshotInput {
            emotional: self.emotional.select_rows(perm)?,
            attentional: self.attentional.select_rows(perm)?,
            upper_body: self.upper_body.select_rows(perm)?,
            students: perm.iter().map(|&i| self.students[i]).collect(),
            labels: perm.iter().map(|&i| self.labels[i]).collect(),
        })
    }
}

/// Parameters and topology constants recorded on one tape.
pub struct BoundModel {
    pub params: ModelParams<Var>,
    hypergraph: BoundHypergraph,
    pair_graph: BoundPairGraph,
}

impl BoundModel {
    /// Tape handles of every parameter, in [`ModelParams::entries`] order.
    pub fn param_vars(&self) -> Vec<Var> {
        self.params.values().into_iter().copied().collect()
    }
}

/// Intermediate outputs of one forward pass.
pub struct ForwardOutputs {
    /// Encoded node features, `3N × D_h`.
    pub encoded: Var,
    pub multivariate: Option<Var>,
    pub multifrequency: Option<Var>,
    pub fused: Var,
    /// Class probabilities, `N × C`.
    pub probs: Var,
}

#[derive(Clone, Debug)]
pub struct DsHgcn {
    config: ModelConfig,
    hypergraph: HypergraphTopology,
    pair_graph: PairGraphTopology,
}

impl DsHgcn {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let hypergraph = HypergraphTopology::build(config.students)?;
        let pair_graph = PairGraphTopology::build(config.students)?;
        Ok(Self { config, hypergraph, pair_graph })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn hypergraph(&self) -> &HypergraphTopology {
        &self.hypergraph
    }

    pub fn pair_graph(&self) -> &PairGraphTopology {
        &self.pair_graph
    }

    pub fn init_params(&self, seed: u64) -> ModelParams<Matrix> {
        let c = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ModelParams {
            encoder: EncoderParams::init(c.dims, c.hidden, c.max_students, &mut rng),
            hyper: HyperParams::init(c.students, c.hidden, c.hyper_layers, &mut rng),
            freq: FreqParams::init(c.hidden, c.freq_layers, &mut rng),
            head: HeadParams::init(c.fused_width(), c.classes, &mut rng),
        }
    }

    /// Checks that `params` has exactly the shapes this configuration implies.
    pub fn check_params(&self, params: &ModelParams<Matrix>) -> Result<()> {
        let expected = self.init_params(0);
        let (want, got) = (expected.entries(), params.entries());
        if want.len() != got.len() {
            return Err(Error::Checkpoint(format!("expected {} parameter tensors, found {}", want.len(), got.len())));
        }
        for ((name, _, w), (_, _, g)) in want.iter().zip(&got) {
            if w.shape() != g.shape() {
                return Err(Error::Checkpoint(format!(
                    "{name}: expected shape {:?}, found {:?}",
                    w.shape(),
                    g.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn bind(&self, tape: &mut Tape, params: &ModelParams<Matrix>) -> BoundModel {
        BoundModel {
            params: params.map(|m| tape.leaf(m.clone())),
            hypergraph: self.hypergraph.bind(tape),
            pair_graph: self.pair_graph.bind(tape),
        }
    }

    fn check_input(&self, input: &SnapshotInput) -> Result<()> {
        let n = self.config.students;
        if input.n_students() != n || input.labels.len() != n {
            return Err(Error::ShapeMismatch {
                op: "snapshot",
                left: (input.n_students(), input.labels.len()),
                right: (n, n),
            });
        }
        for kind in FeatureKind::ALL {
            let m = input.features(kind);
            let want = (n, self.config.dims.get(kind));
            if m.shape() != want {
                return Err(Error::ShapeMismatch { op: "snapshot features", left: m.shape(), right: want });
            }
        }
        Ok(())
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &BoundModel,
        input: &SnapshotInput,
        dropout: &mut Dropout<'_>,
    ) -> Result<ForwardOutputs> {
        self.check_input(input)?;
        let n = self.config.students;
        let ablation = self.config.ablation;
        let p = &bound.params;

        let enc_input = EncoderInput {
            emotional: tape.leaf(input.emotional.clone()),
            attentional: tape.leaf(input.attentional.clone()),
            upper_body: tape.leaf(input.upper_body.clone()),
        };
        let per_type = encoder::encode(tape, &enc_input, &input.students, &p.encoder, ablation.dropped_feature())?;
        // Stack type-major, then reorder to node id 3·i + t.
        let stacked = tape.stack_rows(&per_type)?;
        let order: Vec<usize> = (0..n).flat_map(|i| (0..3).map(move |t| t * n + i)).collect();
        let encoded = tape.select_rows(stacked, &order)?;

        let multivariate = if ablation.uses_multivariate() {
            Some(hypergraph::multivariate_forward(
                tape,
                encoded,
                &bound.hypergraph,
                &p.hyper,
                self.config.effective_attention(),
                dropout,
            )?)
        } else {
            None
        };
        let multifrequency = if ablation.uses_multifrequency() {
            Some(frequency::multifrequency_forward(tape, encoded, &bound.pair_graph, &p.freq, dropout)?)
        } else {
            None
        };

        let streams: Vec<Var> = match (multivariate, multifrequency) {
            (None, None) => vec![encoded],
            (v, f) => v.into_iter().chain(f).collect(),
        };
        let fused = head::fuse(tape, &streams, n)?;
        let probs = head::classify(tape, fused, &p.head)?;
        Ok(ForwardOutputs { encoded, multivariate, multifrequency, fused, probs })
    }

    /// Evaluation-mode class probabilities for one snapshot.
    pub fn predict_proba(&self, params: &ModelParams<Matrix>, input: &SnapshotInput) -> Result<Matrix> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, params);
        let out = self.forward(&mut tape, &bound, input, &mut Dropout::disabled())?;
        Ok(tape.value(out.probs).clone())
    }
}
