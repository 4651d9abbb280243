//! Dual-stream hypergraph convolutional network for per-student engagement
//! classification in classroom snapshots.
//!
//! A snapshot of `N` students becomes `3N` nodes, one per student and feature
//! type. The multivariate stream runs attention-weighted hypergraph
//! convolution over student and feature-type hyperedges; the multi-frequency
//! stream filters the clique expansion with low- and high-pass operators.
//! Both outputs are fused per student and classified.

pub mod checkpoint;
pub mod data;
pub mod encoder;
pub mod error;
pub mod frequency;
pub mod gradcheck;
pub mod head;
pub mod hypergraph;
pub mod model;
pub mod numerics;
pub mod training;

pub use checkpoint::Checkpoint;
pub use encoder::{FeatureDims, FeatureKind};
pub use error::{Error, Result};
pub use gradcheck::{gradcheck, GradcheckConfig, GradcheckReport};
pub use hypergraph::AttentionMode;
pub use model::{Ablation, DsHgcn, ModelConfig, ModelParams, ParamGroup, SnapshotInput};
pub use numerics::{Matrix, Tape, Var};
pub use training::{evaluate, train, MetricsReport, TrainConfig};
