//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation in execution order. Each node keeps its
//! output value and the operands it was computed from, so the node list is
//! topologically sorted by construction. [`Tape::backward`] walks the list once
//! in reverse, applying each node's local gradient rule.

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation kinds, used to name gradient rules (see [`Tape::corrupt_rule`]).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    MatMul,
    Add,
    Sub,
    Hadamard,
    Scale,
    Relu,
    LeakyRelu,
    SoftmaxRows,
    MaskedSoftmaxRows,
    Concat,
    StackRows,
    SelectRows,
    AddRowBroadcast,
    OuterSum,
    Transpose,
    RowSums,
    ColSums,
    Reciprocal,
    ScaleRows,
    ScaleCols,
    Sum,
    SumSquares,
    WeightedNll,
}

impl OpKind {
    pub const ALL: [OpKind; 24] = [
        OpKind::Leaf,
        OpKind::MatMul,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Hadamard,
        OpKind::Scale,
        OpKind::Relu,
        OpKind::LeakyRelu,
        OpKind::SoftmaxRows,
        OpKind::MaskedSoftmaxRows,
        OpKind::Concat,
        OpKind::StackRows,
        OpKind::SelectRows,
        OpKind::AddRowBroadcast,
        OpKind::OuterSum,
        OpKind::Transpose,
        OpKind::RowSums,
        OpKind::ColSums,
        OpKind::Reciprocal,
        OpKind::ScaleRows,
        OpKind::ScaleCols,
        OpKind::Sum,
        OpKind::SumSquares,
        OpKind::WeightedNll,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::MatMul => "mat_mul",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Hadamard => "hadamard",
            OpKind::Scale => "scale",
            OpKind::Relu => "relu",
            OpKind::LeakyRelu => "leaky_relu",
            OpKind::SoftmaxRows => "softmax_rows",
            OpKind::MaskedSoftmaxRows => "masked_softmax_rows",
            OpKind::Concat => "concat",
            OpKind::StackRows => "stack_rows",
            OpKind::SelectRows => "select_rows",
            OpKind::AddRowBroadcast => "add_row_broadcast",
            OpKind::OuterSum => "outer_sum",
            OpKind::Transpose => "transpose",
            OpKind::RowSums => "row_sums",
            OpKind::ColSums => "col_sums",
            OpKind::Reciprocal => "reciprocal",
            OpKind::ScaleRows => "scale_rows",
            OpKind::ScaleCols => "scale_cols",
            OpKind::Sum => "sum",
            OpKind::SumSquares => "sum_squares",
            OpKind::WeightedNll => "weighted_nll",
        }
    }
}

impl std::str::FromStr for OpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OpKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown operation {s:?}")))
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    LeakyRelu(Var, f64),
    SoftmaxRows(Var),
    MaskedSoftmaxRows(Var),
    Concat(Vec<Var>),
    StackRows(Vec<Var>),
    SelectRows(Var, Vec<usize>),
    AddRowBroadcast(Var, Var),
    OuterSum(Var, Var),
    Transpose(Var),
    RowSums(Var),
    ColSums(Var),
    Reciprocal(Var),
    ScaleRows(Var, Var),
    ScaleCols(Var, Var),
    Sum(Var),
    SumSquares(Var),
    WeightedNll { probs: Var, labels: Vec<usize>, weights: Vec<f64>, floor: f64 },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Hadamard(..) => OpKind::Hadamard,
            Op::Scale(..) => OpKind::Scale,
            Op::Relu(..) => OpKind::Relu,
            Op::LeakyRelu(..) => OpKind::LeakyRelu,
            Op::SoftmaxRows(..) => OpKind::SoftmaxRows,
            Op::MaskedSoftmaxRows(..) => OpKind::MaskedSoftmaxRows,
            Op::Concat(..) => OpKind::Concat,
            Op::StackRows(..) => OpKind::StackRows,
            Op::SelectRows(..) => OpKind::SelectRows,
            Op::AddRowBroadcast(..) => OpKind::AddRowBroadcast,
            Op::OuterSum(..) => OpKind::OuterSum,
            Op::Transpose(..) => OpKind::Transpose,
            Op::RowSums(..) => OpKind::RowSums,
            Op::ColSums(..) => OpKind::ColSums,
            Op::Reciprocal(..) => OpKind::Reciprocal,
            Op::ScaleRows(..) => OpKind::ScaleRows,
            Op::ScaleCols(..) => OpKind::ScaleCols,
            Op::Sum(..) => OpKind::Sum,
            Op::SumSquares(..) => OpKind::SumSquares,
            Op::WeightedNll { .. } => OpKind::WeightedNll,
        }
    }
}

struct Node {
    value: Matrix,
    op: Op,
}

/// Records differentiable operations on dense matrices.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    corrupted: Option<OpKind>,
}

/// Gradients of a scalar with respect to every node of a tape.
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient for `var`, or `None` when `var` is not on any path to the loss.
    pub fn get(&self, var: Var) -> Option<&Matrix> {
        self.grads[var.0].as_ref()
    }

    /// Gradient for `var`, zero-filled when `var` does not reach the loss.
    pub fn wrt(&self, var: Var) -> Matrix {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[var.0];
                Matrix::zeros(r, c)
            }
        }
    }
}

fn mismatch(op: &'static str, a: &Matrix, b: &Matrix) -> Error {
    Error::ShapeMismatch { op, left: a.shape(), right: b.shape() }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Matrix {
        &self.nodes[var.0].value
    }

    /// Operand indices of a node, for inspecting the recorded graph.
    pub fn operands(&self, var: Var) -> Vec<Var> {
        match &self.nodes[var.0].op {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Hadamard(a, b)
            | Op::AddRowBroadcast(a, b)
            | Op::OuterSum(a, b)
            | Op::ScaleRows(a, b)
            | Op::ScaleCols(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Relu(a)
            | Op::LeakyRelu(a, _)
            | Op::SoftmaxRows(a)
            | Op::MaskedSoftmaxRows(a)
            | Op::SelectRows(a, _)
            | Op::Transpose(a)
            | Op::RowSums(a)
            | Op::ColSums(a)
            | Op::Reciprocal(a)
            | Op::Sum(a)
            | Op::SumSquares(a) => vec![*a],
            Op::WeightedNll { probs, .. } => vec![*probs],
            Op::Concat(parts) | Op::StackRows(parts) => parts.clone(),
        }
    }

    pub fn kind(&self, var: Var) -> OpKind {
        self.nodes[var.0].op.kind()
    }

    /// Test hook: perturbs the backward rule of one operation kind so that
    /// gradient checks can demonstrate they detect a wrong rule.
    #[doc(hidden)]
    pub fn corrupt_rule(&mut self, kind: OpKind) {
        self.corrupted = Some(kind);
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf: a parameter or a constant input.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(value, Op::Hadamard(a, b)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).scale(factor);
        self.push(value, Op::Scale(a, factor))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(value, Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.push(value, Op::LeakyRelu(a, slope))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = x.clone();
        for r in 0..x.rows() {
            softmax_in_place(out.row_mut(r), None);
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    /// Row-wise softmax restricted to the nonzero entries of `mask`; masked-out
    /// entries are exactly zero. Every row of `mask` needs a nonzero entry.
    pub fn masked_softmax_rows(&mut self, a: Var, mask: &Matrix) -> Result<Var> {
        let x = self.value(a);
        if x.shape() != mask.shape() {
            return Err(mismatch("masked_softmax_rows", x, mask));
        }
        let mut out = x.clone();
        for r in 0..x.rows() {
            let m = mask.row(r);
            if m.iter().all(|v| *v == 0.0) {
                return Err(Error::DegenerateDegree { kind: "node", index: r });
            }
            softmax_in_place(out.row_mut(r), Some(m));
        }
        Ok(self.push(out, Op::MaskedSoftmaxRows(a)))
    }

    /// Horizontal concatenation of matrices with equal row counts. For row
    /// vectors this is plain vector concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::InvalidConfig("concat of an empty list".into()))?;
        let rows = self.value(first).rows();
        for p in parts {
            if self.value(*p).rows() != rows {
                return Err(mismatch("concat", self.value(first), self.value(*p)));
            }
        }
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(r));
            }
        }
        let value = Matrix::from_vec(rows, cols, data)?;
        Ok(self.push(value, Op::Concat(parts.to_vec())))
    }

    /// Vertical stacking of matrices with equal column counts.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::InvalidConfig("stack_rows of an empty list".into()))?;
        let cols = self.value(first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let v = self.value(*p);
            if v.cols() != cols {
                return Err(mismatch("stack_rows", self.value(first), v));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let value = Matrix::from_vec(rows, cols, data)?;
        Ok(self.push(value, Op::StackRows(parts.to_vec())))
    }

    pub fn select_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let value = self.value(a).select_rows(indices)?;
        Ok(self.push(value, Op::SelectRows(a, indices.to_vec())))
    }

    /// Adds a `1 × cols` row vector to every row of `a`.
    pub fn add_row_broadcast(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, r) = (self.value(a), self.value(row));
        if r.rows() != 1 || r.cols() != m.cols() {
            return Err(mismatch("add_row_broadcast", m, r));
        }
        let mut out = m.clone();
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(r.data()) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddRowBroadcast(a, row)))
    }

    /// `out[i][j] = col[i] + row[j]` for an `n × 1` column and `1 × m` row.
    pub fn outer_sum(&mut self, col: Var, row: Var) -> Result<Var> {
        let (c, r) = (self.value(col), self.value(row));
        if c.cols() != 1 || r.rows() != 1 {
            return Err(mismatch("outer_sum", c, r));
        }
        let value = Matrix::from_fn(c.rows(), r.cols(), |i, j| c.data()[i] + r.data()[j]);
        Ok(self.push(value, Op::OuterSum(col, row)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a))
    }

    pub fn row_sums(&mut self, a: Var) -> Var {
        let value = self.value(a).row_sums();
        self.push(value, Op::RowSums(a))
    }

    pub fn col_sums(&mut self, a: Var) -> Var {
        let value = self.value(a).col_sums();
        self.push(value, Op::ColSums(a))
    }

    /// Elementwise `1/x`. Zero entries are reported as degenerate degrees,
    /// since this op only ever inverts degree vectors.
    pub fn reciprocal(&mut self, a: Var, kind: &'static str) -> Result<Var> {
        let x = self.value(a);
        if let Some(index) = x.data().iter().position(|v| *v == 0.0) {
            return Err(Error::DegenerateDegree { kind, index });
        }
        let value = x.map(|v| 1.0 / v);
        Ok(self.push(value, Op::Reciprocal(a)))
    }

    /// `diag(scale) · a` for an `rows × 1` column `scale`.
    pub fn scale_rows(&mut self, a: Var, scale: Var) -> Result<Var> {
        let (m, s) = (self.value(a), self.value(scale));
        if s.cols() != 1 || s.rows() != m.rows() {
            return Err(mismatch("scale_rows", m, s));
        }
        let mut out = m.clone();
        for i in 0..out.rows() {
            let f = s.data()[i];
            out.row_mut(i).iter_mut().for_each(|v| *v *= f);
        }
        Ok(self.push(out, Op::ScaleRows(a, scale)))
    }

    /// `a · diag(scale)` for a `1 × cols` row `scale`.
    pub fn scale_cols(&mut self, a: Var, scale: Var) -> Result<Var> {
        let (m, s) = (self.value(a), self.value(scale));
        if s.rows() != 1 || s.cols() != m.cols() {
            return Err(mismatch("scale_cols", m, s));
        }
        let mut out = m.clone();
        for i in 0..out.rows() {
            for (v, f) in out.row_mut(i).iter_mut().zip(s.data()) {
                *v *= f;
            }
        }
        Ok(self.push(out, Op::ScaleCols(a, scale)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::filled(1, 1, self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let value = Matrix::filled(1, 1, self.value(a).sum_squares());
        self.push(value, Op::SumSquares(a))
    }

    /// `-Σ_i weights[labels[i]] · ln max(probs[i][labels[i]], floor)` as a 1×1 node.
    pub fn weighted_nll(&mut self, probs: Var, labels: &[usize], weights: &[f64], floor: f64) -> Result<Var> {
        let p = self.value(probs);
        if labels.len() != p.rows() {
            return Err(Error::ShapeMismatch { op: "weighted_nll", left: p.shape(), right: (labels.len(), 1) });
        }
        if weights.len() != p.cols() {
            return Err(Error::ShapeMismatch { op: "weighted_nll", left: p.shape(), right: (1, weights.len()) });
        }
        let mut total = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            if y >= p.cols() {
                return Err(Error::IndexOutOfRange { what: "label", index: y, len: p.cols() });
            }
            total -= weights[y] * p.get(i, y).max(floor).ln();
        }
        let value = Matrix::filled(1, 1, total);
        Ok(self.push(value, Op::WeightedNll { probs, labels: labels.to_vec(), weights: weights.to_vec(), floor }))
    }

    /// Gradients of the scalar `loss` with respect to every recorded node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(Error::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::ones(1, 1));

        for idx in (0..=loss.0).rev() {
            let Some(mut upstream) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if self.corrupted == Some(node.op.kind()) {
                upstream = upstream.scale(1.25);
            }
            self.propagate(node, &upstream, &mut grads)?;
            grads[idx] = Some(upstream);
        }

        Ok(Gradients { grads, shapes: self.nodes.iter().map(|n| n.value.shape()).collect() })
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) -> Result<()> {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                accumulate(grads, *a, g.matmul_t(val(*b))?)?;
                accumulate(grads, *b, val(*a).t_matmul(g)?)?;
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone())?;
                accumulate(grads, *b, g.clone())?;
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone())?;
                accumulate(grads, *b, g.scale(-1.0))?;
            }
            Op::Hadamard(a, b) => {
                accumulate(grads, *a, g.hadamard(val(*b))?)?;
                accumulate(grads, *b, g.hadamard(val(*a))?)?;
            }
            Op::Scale(a, f) => accumulate(grads, *a, g.scale(*f))?,
            Op::Relu(a) => {
                let mask = val(*a).map(|x| if x > 0.0 { 1.0 } else { 0.0 });
                accumulate(grads, *a, g.hadamard(&mask)?)?;
            }
            Op::LeakyRelu(a, slope) => {
                let s = *slope;
                let mask = val(*a).map(|x| if x > 0.0 { 1.0 } else { s });
                accumulate(grads, *a, g.hadamard(&mask)?)?;
            }
            Op::SoftmaxRows(a) | Op::MaskedSoftmaxRows(a) => {
                // Masked entries have y = 0, so the same rule zeroes them.
                let y = &node.value;
                let mut dx = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for (d, (p, q)) in dx.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                        *d = p * (q - dot);
                    }
                }
                accumulate(grads, *a, dx)?;
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let cols = val(*p).cols();
                    let piece = Matrix::from_fn(g.rows(), cols, |r, c| g.get(r, offset + c));
                    accumulate(grads, *p, piece)?;
                    offset += cols;
                }
            }
            Op::StackRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let rows = val(*p).rows();
                    let piece = Matrix::from_fn(rows, g.cols(), |r, c| g.get(offset + r, c));
                    accumulate(grads, *p, piece)?;
                    offset += rows;
                }
            }
            Op::SelectRows(a, indices) => {
                let src = val(*a);
                let mut dx = Matrix::zeros(src.rows(), src.cols());
                for (out_row, &i) in indices.iter().enumerate() {
                    for (d, v) in dx.row_mut(i).iter_mut().zip(g.row(out_row)) {
                        *d += v;
                    }
                }
                accumulate(grads, *a, dx)?;
            }
            Op::AddRowBroadcast(a, row) => {
                accumulate(grads, *a, g.clone())?;
                accumulate(grads, *row, g.col_sums())?;
            }
            Op::OuterSum(col, row) => {
                accumulate(grads, *col, g.row_sums())?;
                accumulate(grads, *row, g.col_sums())?;
            }
            Op::Transpose(a) => accumulate(grads, *a, g.transpose())?,
            Op::RowSums(a) => {
                let src = val(*a);
                let dx = Matrix::from_fn(src.rows(), src.cols(), |r, _| g.data()[r]);
                accumulate(grads, *a, dx)?;
            }
            Op::ColSums(a) => {
                let src = val(*a);
                let dx = Matrix::from_fn(src.rows(), src.cols(), |_, c| g.data()[c]);
                accumulate(grads, *a, dx)?;
            }
            Op::Reciprocal(a) => {
                let y = &node.value;
                let dx = Matrix::from_fn(y.rows(), y.cols(), |r, c| -g.get(r, c) * y.get(r, c) * y.get(r, c));
                accumulate(grads, *a, dx)?;
            }
            Op::ScaleRows(a, s) => {
                let (m, sv) = (val(*a), val(*s));
                let dm = Matrix::from_fn(m.rows(), m.cols(), |r, c| g.get(r, c) * sv.data()[r]);
                let ds = Matrix::from_fn(m.rows(), 1, |r, _| g.row(r).iter().zip(m.row(r)).map(|(p, q)| p * q).sum());
                accumulate(grads, *a, dm)?;
                accumulate(grads, *s, ds)?;
            }
            Op::ScaleCols(a, s) => {
                let (m, sv) = (val(*a), val(*s));
                let dm = Matrix::from_fn(m.rows(), m.cols(), |r, c| g.get(r, c) * sv.data()[c]);
                accumulate(grads, *a, dm)?;
                accumulate(grads, *s, g.hadamard(m)?.col_sums())?;
            }
            Op::Sum(a) => {
                let (r, c) = val(*a).shape();
                accumulate(grads, *a, Matrix::filled(r, c, g.data()[0]))?;
            }
            Op::SumSquares(a) => {
                let f = 2.0 * g.data()[0];
                accumulate(grads, *a, val(*a).scale(f))?;
            }
            Op::WeightedNll { probs, labels, weights, floor } => {
                let p = val(*probs);
                let upstream = g.data()[0];
                let mut dp = Matrix::zeros(p.rows(), p.cols());
                for (i, &y) in labels.iter().enumerate() {
                    let pi = p.get(i, y);
                    if pi > *floor {
                        dp.set(i, y, -upstream * weights[y] / pi);
                    }
                }
                accumulate(grads, *probs, dp)?;
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Matrix>], var: Var, g: Matrix) -> Result<()> {
    match &mut grads[var.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

fn softmax_in_place(row: &mut [f64], mask: Option<&[f64]>) {
    let active = |i: usize| mask.is_none_or(|m| m[i] != 0.0);
    let max = row.iter().enumerate().filter(|(i, _)| active(*i)).fold(f64::NEG_INFINITY, |m, (_, v)| m.max(*v));
    let mut total = 0.0;
    for (i, v) in row.iter_mut().enumerate() {
        if active(i) {
            *v = (*v - max).exp();
            total += *v;
        } else {
            *v = 0.0;
        }
    }
    row.iter_mut().for_each(|v| *v /= total);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(t: &Tape, v: Var) -> f64 {
        t.value(v).data()[0]
    }

    #[test]
    fn relu_sign_cases() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::row_vector(&[-1.0, 0.0, 2.0]));
        let y = t.relu(x);
        assert_eq!(t.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::row_vector(&[0.0, 1.0]));
        let y = t.relu(x);
        let s = t.sum(y);
        let g = t.backward(s).unwrap();
        assert_eq!(g.wrt(x).data(), &[0.0, 1.0]);
    }

    #[test]
    fn additive_and_multiplicative_identities() {
        let a = Matrix::from_rows(&[vec![1.5, -2.0], vec![0.25, 3.0]]);
        let mut t = Tape::new();
        let va = t.leaf(a.clone());
        let zero = t.leaf(Matrix::zeros(2, 2));
        let one = t.leaf(Matrix::ones(2, 2));
        let s = t.add(va, zero).unwrap();
        let h = t.hadamard(va, one).unwrap();
        assert_eq!(t.value(s), &a);
        assert_eq!(t.value(h), &a);
        let wrong = t.leaf(Matrix::zeros(1, 2));
        assert!(matches!(t.add(va, wrong), Err(Error::ShapeMismatch { op: "add", .. })));
    }

    #[test]
    fn softmax_symmetry_and_stability() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::row_vector(&[0.0, 0.0]));
        let y = t.softmax_rows(x);
        assert_eq!(t.value(y).data(), &[0.5, 0.5]);

        let x = t.leaf(Matrix::row_vector(&[1000.0, 0.0]));
        let y = t.softmax_rows(x);
        let p = t.value(y).data();
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p[0] - 1.0).abs() < 1e-12 && p[1] < 1e-300 + 1e-12);
    }

    #[test]
    fn masked_softmax_zeroes_outside_mask() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::row_vector(&[3.0, 1.0, -2.0]));
        let mask = Matrix::row_vector(&[1.0, 0.0, 1.0]);
        let y = t.masked_softmax_rows(x, &mask).unwrap();
        let p = t.value(y).data();
        assert_eq!(p[1], 0.0);
        assert!((p[0] + p[2] - 1.0).abs() < 1e-15);
        assert!(t.masked_softmax_rows(x, &Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn concat_preserves_order_and_routes_gradient() {
        let mut t = Tape::new();
        let a = t.leaf(Matrix::row_vector(&[1.0, 2.0]));
        let b = t.leaf(Matrix::row_vector(&[3.0]));
        let c = t.concat(&[a, b]).unwrap();
        assert_eq!(t.value(c).data(), &[1.0, 2.0, 3.0]);
        let single = t.concat(&[a]).unwrap();
        assert_eq!(t.value(single), t.value(a));
        let s = t.sum(c);
        let g = t.backward(s).unwrap();
        assert_eq!(g.wrt(a).data(), &[1.0, 1.0]);
        assert_eq!(g.wrt(b).data(), &[1.0]);
        assert!(t.concat(&[]).is_err());
    }

    #[test]
    fn linear_loss_gradient_is_input_broadcast() {
        // loss = sum(W x) → dW[i][j] = x[j]
        let mut t = Tape::new();
        let w = t.leaf(Matrix::from_fn(3, 2, |r, c| (r + c) as f64));
        let x = t.leaf(Matrix::column_vector(&[0.5, -1.5]));
        let y = t.matmul(w, x).unwrap();
        let s = t.sum(y);
        let g = t.backward(s).unwrap();
        assert_eq!(g.wrt(w), Matrix::from_fn(3, 2, |_, c| [0.5, -1.5][c]));
    }

    #[test]
    fn disconnected_leaf_gets_zero_gradient() {
        let mut t = Tape::new();
        let a = t.leaf(Matrix::ones(2, 2));
        let unused = t.leaf(Matrix::ones(3, 1));
        let s = t.sum(a);
        let g = t.backward(s).unwrap();
        assert!(g.get(unused).is_none());
        assert_eq!(g.wrt(unused), Matrix::zeros(3, 1));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut t = Tape::new();
        let a = t.leaf(Matrix::ones(2, 2));
        assert!(matches!(t.backward(a), Err(Error::NonScalarLoss((2, 2)))));
    }

    #[test]
    fn operands_precede_their_node() {
        let mut t = Tape::new();
        let a = t.leaf(Matrix::ones(2, 3));
        let b = t.leaf(Matrix::ones(3, 2));
        let c = t.matmul(a, b).unwrap();
        let d = t.relu(c);
        let e = t.sum(d);
        for i in 0..t.len() {
            for op in t.operands(Var(i)) {
                assert!(op.index() < i);
            }
        }
        assert_eq!(scalar(&t, e), 12.0);
    }

    #[test]
    fn weighted_nll_rejects_out_of_range_label() {
        let mut t = Tape::new();
        let p = t.leaf(Matrix::row_vector(&[0.5, 0.5]));
        assert!(t.weighted_nll(p, &[2], &[1.0, 1.0], 1e-12).is_err());
    }
}
