//! Multi-frequency propagation over the clique expansion of the hypergraph.
//!
//! Two nodes are adjacent when they share a hyperedge: same feature type of
//! different students, or different types of the same student. Layers mix a
//! low-pass `2I − L` and a high-pass `L` view of the features.

use rand::Rng;

use crate::encoder::{uniform_init, FeatureKind};
use crate::error::{Error, Result};
use crate::hypergraph::node_id;
use crate::numerics::{Dropout, Matrix, Tape, Var};

#[derive(Clone, Debug)]
pub struct PairGraphTopology {
    n_students: usize,
    adjacency: Matrix,
    degrees: Vec<f64>,
    laplacian: Matrix,
    filter_low: Matrix,
    filter_high: Matrix,
}

impl PairGraphTopology {
    pub fn build(n_students: usize) -> Result<Self> {
        if n_students == 0 {
            return Err(Error::InvalidConfig("pair graph needs at least one student".into()));
        }
        let n = 3 * n_students;
        let mut adjacency = Matrix::zeros(n, n);
        for i in 0..n_students {
            for t in FeatureKind::ALL {
                let v = node_id(i, t);
                for j in 0..n_students {
                    if j != i {
                        adjacency.set(v, node_id(j, t), 1.0);
                    }
                }
                for z in FeatureKind::ALL {
                    if z != t {
                        adjacency.set(v, node_id(i, z), 1.0);
                    }
                }
            }
        }
        let degrees: Vec<f64> = adjacency.row_sums().into_vec();
        let inv_sqrt: Vec<f64> = degrees.iter().map(|d| 1.0 / d.sqrt()).collect();
        let norm_adj = Matrix::from_fn(n, n, |r, c| inv_sqrt[r] * adjacency.get(r, c) * inv_sqrt[c]);
        let identity = Matrix::identity(n);
        let laplacian = identity.sub(&norm_adj)?;
        let filter_low = identity.add(&norm_adj)?;
        let filter_high = laplacian.clone();
        Ok(Self { n_students, adjacency, degrees, laplacian, filter_low, filter_high })
    }

    pub fn n_students(&self) -> usize {
        self.n_students
    }

    pub fn adjacency(&self) -> &Matrix {
        &self.adjacency
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    /// `I − D^{-1/2} A D^{-1/2}`
    pub fn laplacian(&self) -> &Matrix {
        &self.laplacian
    }

    /// `2I − L`
    pub fn filter_low(&self) -> &Matrix {
        &self.filter_low
    }

    /// `L`
    pub fn filter_high(&self) -> &Matrix {
        &self.filter_high
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundPairGraph {
        BoundPairGraph { low: tape.leaf(self.filter_low.clone()), high: tape.leaf(self.filter_high.clone()) }
    }
}

pub struct BoundPairGraph {
    pub low: Var,
    pub high: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FreqParams<T> {
    /// `W_l^(k)`, each `D_h × D_h`.
    pub low: Vec<T>,
    /// `W_h^(k)`, each `D_h × D_h`.
    pub high: Vec<T>,
}

impl<T> FreqParams<T> {
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> FreqParams<U> {
        FreqParams { low: self.low.iter().map(&mut f).collect(), high: self.high.iter().map(&mut f).collect() }
    }
}

impl FreqParams<Matrix> {
    pub fn init(hidden: usize, layers: usize, rng: &mut impl Rng) -> Self {
        let mut low = Vec::with_capacity(layers);
        let mut high = Vec::with_capacity(layers);
        for _ in 0..layers {
            low.push(uniform_init(hidden, hidden, hidden, rng));
            high.push(uniform_init(hidden, hidden, hidden, rng));
        }
        Self { low, high }
    }
}

/// `ReLU((F_l X) W_l + (F_h X) W_h)`
pub fn freq_layer(tape: &mut Tape, features: Var, graph: &BoundPairGraph, low: Var, high: Var) -> Result<Var> {
    let lx = tape.matmul(graph.low, features)?;
    let lx = tape.matmul(lx, low)?;
    let hx = tape.matmul(graph.high, features)?;
    let hx = tape.matmul(hx, high)?;
    let sum = tape.add(lx, hx)?;
    Ok(tape.relu(sum))
}

/// Stacks one [`freq_layer`] per weight pair and returns the last output.
pub fn multifrequency_forward(
    tape: &mut Tape,
    encoded: Var,
    graph: &BoundPairGraph,
    params: &FreqParams<Var>,
    dropout: &mut Dropout<'_>,
) -> Result<Var> {
    if params.low.is_empty() || params.low.len() != params.high.len() {
        return Err(Error::InvalidConfig(format!(
            "frequency stream needs matching nonzero layer counts, got {} low / {} high",
            params.low.len(),
            params.high.len()
        )));
    }
    let mut f = encoded;
    for (&low, &high) in params.low.iter().zip(&params.high) {
        f = freq_layer(tape, f, graph, low, high)?;
        f = dropout.apply(tape, f)?;
    }
    Ok(f)
}
