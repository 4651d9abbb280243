//! Per-student fusion of the stream outputs, the softmax classifier, and the
//! class-weighted, L2-regularized cross-entropy objective.

use rand::Rng;

use crate::encoder::{uniform_init, FeatureKind};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Tape, Var, LOG_FLOOR};

#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams<T> {
    /// `W_4`, `fused_width × C`.
    pub weight: T,
    /// `b_4`, `1 × C`.
    pub bias: T,
}

impl<T> HeadParams<T> {
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> HeadParams<U> {
        HeadParams { weight: f(&self.weight), bias: f(&self.bias) }
    }
}

impl HeadParams<Matrix> {
    pub fn init(fused_width: usize, classes: usize, rng: &mut impl Rng) -> Self {
        Self { weight: uniform_init(fused_width, classes, fused_width, rng), bias: Matrix::zeros(1, classes) }
    }
}

/// Builds the `N × (k·D_h)` fused matrix from `k` stream outputs (each
/// `3N × D_h`). Row `i` is, per feature type in order e, a, u, the rows of
/// every stream for that student's node: with streams `[v, f]` this gives
/// `v^e ⊕ f^e ⊕ v^a ⊕ f^a ⊕ v^u ⊕ f^u`.
pub fn fuse(tape: &mut Tape, streams: &[Var], n_students: usize) -> Result<Var> {
    if streams.is_empty() {
        return Err(Error::InvalidConfig("fusion needs at least one stream output".into()));
    }
    let mut parts = Vec::with_capacity(3 * streams.len());
    for kind in FeatureKind::ALL {
        let rows: Vec<usize> = (0..n_students).map(|i| 3 * i + kind.offset()).collect();
        for &s in streams {
            if tape.value(s).rows() != 3 * n_students {
                return Err(Error::ShapeMismatch {
                    op: "fuse",
                    left: tape.value(s).shape(),
                    right: (3 * n_students, 0),
                });
            }
            parts.push(tape.select_rows(s, &rows)?);
        }
    }
    tape.concat(&parts)
}

/// `softmax(ReLU(μ) W_4 + b_4)` row-wise; returns the `N × C` probabilities.
pub fn classify(tape: &mut Tape, fused: Var, params: &HeadParams<Var>) -> Result<Var> {
    let act = tape.relu(fused);
    let logits = tape.matmul(act, params.weight)?;
    let logits = tape.add_row_broadcast(logits, params.bias)?;
    Ok(tape.softmax_rows(logits))
}

/// Argmax per row; ties go to the lowest class index.
pub fn predict(probs: &Matrix) -> Vec<usize> {
    (0..probs.rows())
        .map(|r| {
            let row = probs.row(r);
            let mut best = 0;
            for (c, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// One snapshot's contribution to the loss.
pub struct LabeledProbs<'a> {
    pub probs: Var,
    pub labels: &'a [usize],
}

/// `-(1/|D|) Σ_i w_{y_i} ln P_i[y_i] + λ Σ_θ ‖θ‖²`, averaged over every
/// student of every snapshot in `batch`.
pub fn loss(
    tape: &mut Tape,
    batch: &[LabeledProbs<'_>],
    class_weights: &[f64],
    params: &[Var],
    lambda: f64,
) -> Result<Var> {
    let count: usize = batch.iter().map(|b| b.labels.len()).sum();
    if count == 0 {
        return Err(Error::InvalidConfig("loss over an empty batch".into()));
    }
    if lambda < 0.0 {
        return Err(Error::InvalidConfig(format!("negative L2 strength {lambda}")));
    }
    let mut total: Option<Var> = None;
    for item in batch {
        let nll = tape.weighted_nll(item.probs, item.labels, class_weights, LOG_FLOOR)?;
        total = Some(match total {
            Some(t) => tape.add(t, nll)?,
            None => nll,
        });
    }
    let data = tape.scale(total.expect("nonempty batch"), 1.0 / count as f64);
    if lambda == 0.0 || params.is_empty() {
        return Ok(data);
    }
    let mut reg: Option<Var> = None;
    for &p in params {
        let sq = tape.sum_squares(p);
        reg = Some(match reg {
            Some(r) => tape.add(r, sq)?,
            None => sq,
        });
    }
    let reg = tape.scale(reg.expect("nonempty params"), lambda);
    tape.add(data, reg)
}
