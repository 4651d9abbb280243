//! Multivariate propagation: the engagement-contagion hypergraph and its
//! attention-weighted convolution stack.
//!
//! Node `3·i + t` holds feature type `t` of student `i`. Hyperedge `i < N`
//! joins the three nodes of student `i`; hyperedges `N`, `N+1`, `N+2` join
//! every node of one feature type.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{uniform_init, FeatureKind};
use crate::error::{Error, Result};
use crate::numerics::{Dropout, Matrix, Tape, Var};

/// Slope of the LeakyReLU applied to attention scores.
pub const ATTENTION_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HyperedgeKind {
    Student(usize),
    Group(FeatureKind),
}

#[derive(Clone, Debug)]
pub struct HypergraphTopology {
    n_students: usize,
    incidence: Matrix,
    kinds: Vec<HyperedgeKind>,
    /// `B⁻¹ Hᵀ` of the binary incidence: averages member nodes per hyperedge.
    edge_mean: Matrix,
}

pub fn node_id(student: usize, kind: FeatureKind) -> usize {
    3 * student + kind.offset()
}

impl HypergraphTopology {
    pub fn build(n_students: usize) -> Result<Self> {
        if n_students == 0 {
            return Err(Error::InvalidConfig("hypergraph needs at least one student".into()));
        }
        let n_nodes = 3 * n_students;
        let n_edges = n_students + 3;
        let mut kinds: Vec<HyperedgeKind> = (0..n_students).map(HyperedgeKind::Student).collect();
        kinds.extend(FeatureKind::ALL.map(HyperedgeKind::Group));

        let mut incidence = Matrix::zeros(n_nodes, n_edges);
        for i in 0..n_students {
            for kind in FeatureKind::ALL {
                let v = node_id(i, kind);
                incidence.set(v, i, 1.0);
                incidence.set(v, n_students + kind.offset(), 1.0);
            }
        }
        let sizes = incidence.col_sums();
        let edge_mean = Matrix::from_fn(n_edges, n_nodes, |e, v| incidence.get(v, e) / sizes.data()[e]);
        Ok(Self { n_students, incidence, kinds, edge_mean })
    }

    pub fn n_students(&self) -> usize {
        self.n_students
    }

    pub fn n_nodes(&self) -> usize {
        3 * self.n_students
    }

    pub fn n_edges(&self) -> usize {
        self.n_students + 3
    }

    /// Binary incidence matrix `H`, `3N × (N+3)`.
    pub fn incidence(&self) -> &Matrix {
        &self.incidence
    }

    pub fn edge_kinds(&self) -> &[HyperedgeKind] {
        &self.kinds
    }

    pub fn edge_mean(&self) -> &Matrix {
        &self.edge_mean
    }

    /// `(student, type)` for a node id.
    pub fn node(&self, id: usize) -> (usize, FeatureKind) {
        (id / 3, FeatureKind::ALL[id % 3])
    }

    pub fn node_degrees(&self) -> Vec<usize> {
        self.incidence.row_sums().data().iter().map(|d| *d as usize).collect()
    }

    pub fn edge_degrees(&self) -> Vec<usize> {
        self.incidence.col_sums().data().iter().map(|d| *d as usize).collect()
    }

    /// Records the topology constants on a tape.
    pub fn bind(&self, tape: &mut Tape) -> BoundHypergraph {
        BoundHypergraph {
            incidence: tape.leaf(self.incidence.clone()),
            edge_mean: tape.leaf(self.edge_mean.clone()),
            mask: self.incidence.clone(),
        }
    }
}

/// Topology constants living on one tape.
pub struct BoundHypergraph {
    pub incidence: Var,
    pub edge_mean: Var,
    mask: Matrix,
}

/// How hyperedge attention is applied across layers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    /// Binary incidence in every layer.
    Off,
    /// Attention recomputed from each layer's input features.
    #[default]
    PerLayer,
    /// Attention computed once from the encoded features with the first
    /// layer's transform and reused by all layers.
    Once,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HyperParams<T> {
    /// Diagonal of `W_e`, stored as a `1 × (N+3)` row.
    pub edge_weights: T,
    /// Attention vector `a`, `2·D_h × 1`: node half first, hyperedge half second.
    pub attention: T,
    /// Per-layer transforms `P^(l)`, each `D_h × D_h`.
    pub transforms: Vec<T>,
}

impl<T> HyperParams<T> {
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> HyperParams<U> {
        HyperParams {
            edge_weights: f(&self.edge_weights),
            attention: f(&self.attention),
            transforms: self.transforms.iter().map(f).collect(),
        }
    }
}

impl HyperParams<Matrix> {
    pub fn init(n_students: usize, hidden: usize, layers: usize, rng: &mut impl Rng) -> Self {
        let edge_weights = Matrix::ones(1, n_students + 3);
        let attention = uniform_init(2 * hidden, 1, 2 * hidden, rng);
        let transforms = (0..layers).map(|_| uniform_init(hidden, hidden, hidden, rng)).collect();
        Self { edge_weights, attention, transforms }
    }
}

/// Attention-weighted incidence `H_γ`.
///
/// For node `v` and incident hyperedge `e`, the score is
/// `LeakyReLU(a₁·(v P) + a₂·(e P))` where `e` is the mean of its member
/// nodes' current features; scores are softmax-normalized over the
/// hyperedges incident to `v`. Non-incident entries are zero.
pub fn attention_weights(
    tape: &mut Tape,
    features: Var,
    graph: &BoundHypergraph,
    transform: Var,
    attention: Var,
) -> Result<Var> {
    let hidden = tape.value(transform).cols();
    if tape.value(attention).shape() != (2 * hidden, 1) {
        return Err(Error::ShapeMismatch {
            op: "attention_weights",
            left: tape.value(attention).shape(),
            right: (2 * hidden, 1),
        });
    }
    let node_half: Vec<usize> = (0..hidden).collect();
    let edge_half: Vec<usize> = (hidden..2 * hidden).collect();
    let a_node = tape.select_rows(attention, &node_half)?;
    let a_edge = tape.select_rows(attention, &edge_half)?;

    let edges = tape.matmul(graph.edge_mean, features)?;
    let node_proj = tape.matmul(features, transform)?;
    let edge_proj = tape.matmul(edges, transform)?;
    let node_score = tape.matmul(node_proj, a_node)?;
    let edge_score = tape.matmul(edge_proj, a_edge)?;
    let edge_score = tape.transpose(edge_score);
    let scores = tape.outer_sum(node_score, edge_score)?;
    let scores = tape.leaky_relu(scores, ATTENTION_SLOPE);
    tape.masked_softmax_rows(scores, &graph.mask)
}

/// One convolution `ReLU(D⁻¹ H W_e B⁻¹ Hᵀ Q P)` where `D` and `B` are the row
/// and column sums of the (possibly attention-weighted) incidence `h`.
pub fn hyperconv_layer(tape: &mut Tape, features: Var, h: Var, edge_weights: Var, transform: Var) -> Result<Var> {
    let node_deg = tape.row_sums(h);
    let edge_deg = tape.col_sums(h);
    let node_inv = tape.reciprocal(node_deg, "node")?;
    let edge_inv = tape.reciprocal(edge_deg, "hyperedge")?;

    let hw = tape.scale_cols(h, edge_weights)?;
    let hwb = tape.scale_cols(hw, edge_inv)?;
    let ht = tape.transpose(h);
    let prop = tape.matmul(hwb, ht)?;
    let prop = tape.scale_rows(prop, node_inv)?;

    let pq = tape.matmul(prop, features)?;
    let out = tape.matmul(pq, transform)?;
    Ok(tape.relu(out))
}

/// Runs the hypergraph stream for `params.transforms.len()` layers and
/// returns the last layer's node features.
pub fn multivariate_forward(
    tape: &mut Tape,
    encoded: Var,
    graph: &BoundHypergraph,
    params: &HyperParams<Var>,
    attention: AttentionMode,
    dropout: &mut Dropout<'_>,
) -> Result<Var> {
    if params.transforms.is_empty() {
        return Err(Error::InvalidConfig("hypergraph stream needs at least one layer".into()));
    }
    let shared = match attention {
        AttentionMode::Once => Some(attention_weights(tape, encoded, graph, params.transforms[0], params.attention)?),
        _ => None,
    };
    let mut q = encoded;
    for &transform in &params.transforms {
        let h = match attention {
            AttentionMode::Off => graph.incidence,
            AttentionMode::PerLayer => attention_weights(tape, q, graph, transform, params.attention)?,
            AttentionMode::Once => shared.expect("computed above"),
        };
        q = hyperconv_layer(tape, q, h, params.edge_weights, transform)?;
        q = dropout.apply(tape, q)?;
    }
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_student_topology() {
        let topo = HypergraphTopology::build(1).unwrap();
        assert_eq!(topo.n_nodes(), 3);
        assert_eq!(topo.n_edges(), 4);
        assert_eq!(topo.node_degrees(), vec![2, 2, 2]);
        assert_eq!(topo.edge_degrees(), vec![3, 1, 1, 1]);
    }

    #[test]
    fn four_students_give_seven_hyperedges() {
        let topo = HypergraphTopology::build(4).unwrap();
        assert_eq!((topo.n_nodes(), topo.n_edges()), (12, 7));
        assert_eq!(topo.edge_degrees(), vec![3, 3, 3, 3, 4, 4, 4]);
        assert_eq!(topo.edge_kinds()[5], HyperedgeKind::Group(FeatureKind::Attentional));
        assert_eq!(topo.node(7), (2, FeatureKind::Attentional));
    }

    #[test]
    fn zero_students_rejected() {
        assert!(HypergraphTopology::build(0).is_err());
    }

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        uniform_init(rows, cols, 1, rng)
    }

    #[test]
    fn zero_attention_vector_gives_uniform_weights() {
        let topo = HypergraphTopology::build(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut t = Tape::new();
        let g = topo.bind(&mut t);
        let q = t.leaf(random(9, 4, &mut rng));
        let p = t.leaf(random(4, 4, &mut rng));
        let a = t.leaf(Matrix::zeros(8, 1));
        let h = attention_weights(&mut t, q, &g, p, a).unwrap();
        let expected = topo.incidence().scale(0.5);
        assert_eq!(t.value(h), &expected);
    }

    #[test]
    fn equal_similarities_split_evenly() {
        // Identical node features make every node and hyperedge embedding equal.
        let topo = HypergraphTopology::build(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut t = Tape::new();
        let g = topo.bind(&mut t);
        let row = random(1, 3, &mut rng);
        let q = t.leaf(Matrix::from_fn(12, 3, |_, c| row.get(0, c)));
        let p = t.leaf(random(3, 3, &mut rng));
        let a = t.leaf(random(6, 1, &mut rng));
        let h = attention_weights(&mut t, q, &g, p, a).unwrap();
        assert!(t.value(h).max_abs_diff(&topo.incidence().scale(0.5)) < 1e-15);
    }

    #[test]
    fn attention_matches_per_node_softmax_oracle() {
        let topo = HypergraphTopology::build(5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (qm, pm, am) = (random(15, 4, &mut rng), random(4, 4, &mut rng), random(8, 1, &mut rng));
        let mut t = Tape::new();
        let g = topo.bind(&mut t);
        let (q, p, a) = (t.leaf(qm.clone()), t.leaf(pm.clone()), t.leaf(am.clone()));
        let h = attention_weights(&mut t, q, &g, p, a).unwrap();
        let hv = t.value(h);

        let inc = topo.incidence();
        let qp = qm.matmul(&pm).unwrap();
        for v in 0..15 {
            let mut scores = Vec::new();
            for e in 0..topo.n_edges() {
                if inc.get(v, e) == 0.0 {
                    assert_eq!(hv.get(v, e), 0.0);
                    continue;
                }
                let members: Vec<usize> = (0..15).filter(|u| inc.get(*u, e) != 0.0).collect();
                let mut ep = [0.0; 4];
                for &u in &members {
                    for (j, x) in ep.iter_mut().enumerate() {
                        *x += qp.get(u, j) / members.len() as f64;
                    }
                }
                let sim: f64 = (0..4).map(|j| am.get(j, 0) * qp.get(v, j) + am.get(4 + j, 0) * ep[j]).sum();
                let s = if sim > 0.0 { sim } else { 0.2 * sim };
                scores.push((e, s));
            }
            let z: f64 = scores.iter().map(|(_, s)| s.exp()).sum();
            let mut total = 0.0;
            for (e, s) in scores {
                assert!((hv.get(v, e) - s.exp() / z).abs() < 1e-12);
                total += hv.get(v, e);
            }
            assert!((total - 1.0).abs() < 1e-9);
        }
    }

    /// Explicit node → hyperedge → node aggregation for a (weighted) incidence.
    pub(crate) fn two_stage_oracle(h: &Matrix, w: &[f64], q: &Matrix, p: &Matrix) -> Matrix {
        let (n, m) = h.shape();
        let d = q.cols();
        let mut edge_msgs = vec![vec![0.0; d]; m];
        for (e, msg) in edge_msgs.iter_mut().enumerate() {
            let deg: f64 = (0..n).map(|v| h.get(v, e)).sum();
            for v in 0..n {
                for j in 0..d {
                    msg[j] += h.get(v, e) * q.get(v, j) / deg;
                }
            }
        }
        let mut agg = Matrix::zeros(n, d);
        for v in 0..n {
            let deg: f64 = (0..m).map(|e| h.get(v, e)).sum();
            for (e, msg) in edge_msgs.iter().enumerate() {
                for j in 0..d {
                    let x = agg.get(v, j) + h.get(v, e) * w[e] * msg[j] / deg;
                    agg.set(v, j, x);
                }
            }
        }
        agg.matmul(p).unwrap().map(|x| x.max(0.0))
    }

    fn conv(h: &Matrix, w: &Matrix, q: &Matrix, p: &Matrix) -> Result<Matrix> {
        let mut t = Tape::new();
        let (hv, wv, qv, pv) = (t.leaf(h.clone()), t.leaf(w.clone()), t.leaf(q.clone()), t.leaf(p.clone()));
        let out = hyperconv_layer(&mut t, qv, hv, wv, pv)?;
        Ok(t.value(out).clone())
    }

    #[test]
    fn single_student_all_ones_case() {
        let topo = HypergraphTopology::build(1).unwrap();
        let q = Matrix::ones(3, 2);
        let out = conv(topo.incidence(), &Matrix::ones(1, 4), &q, &Matrix::identity(2)).unwrap();
        let oracle = two_stage_oracle(topo.incidence(), &[1.0; 4], &q, &Matrix::identity(2));
        assert!(out.max_abs_diff(&oracle) < 1e-15);
        assert!(out.max_abs_diff(&Matrix::ones(3, 2)) < 1e-15);
    }

    #[test]
    fn zero_transform_annihilates() {
        let topo = HypergraphTopology::build(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let out = conv(topo.incidence(), &Matrix::ones(1, 6), &random(9, 3, &mut rng), &Matrix::zeros(3, 3)).unwrap();
        assert_eq!(out, Matrix::zeros(9, 3));
    }

    #[test]
    fn weighted_incidence_matches_two_stage_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let topo = HypergraphTopology::build(4).unwrap();
        let h = topo.incidence().hadamard(&random(12, 7, &mut rng).map(|x| 0.1 + x.abs())).unwrap();
        let w = random(1, 7, &mut rng);
        let (q, p) = (random(12, 5, &mut rng), random(5, 5, &mut rng));
        let out = conv(&h, &w, &q, &p).unwrap();
        let oracle = two_stage_oracle(&h, w.data(), &q, &p);
        assert!(out.max_abs_diff(&oracle) < 1e-12);
    }

    #[test]
    fn zero_degree_is_reported() {
        let mut h = HypergraphTopology::build(2).unwrap().incidence().clone();
        for e in 0..5 {
            h.set(4, e, 0.0);
        }
        let err = conv(&h, &Matrix::ones(1, 5), &Matrix::ones(6, 2), &Matrix::identity(2)).unwrap_err();
        assert!(matches!(err, Error::DegenerateDegree { kind: "node", index: 4 }));
    }

    #[test]
    fn one_layer_forward_is_one_convolution() {
        let topo = HypergraphTopology::build(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let params = HyperParams::init(2, 4, 1, &mut rng);
        let q = random(6, 4, &mut rng);

        let mut t = Tape::new();
        let g = topo.bind(&mut t);
        let bp = params.map(|m| t.leaf(m.clone()));
        let qv = t.leaf(q.clone());
        let out = multivariate_forward(&mut t, qv, &g, &bp, AttentionMode::Off, &mut Dropout::disabled()).unwrap();
        let direct = conv(topo.incidence(), &params.edge_weights, &q, &params.transforms[0]).unwrap();
        assert_eq!(t.value(out), &direct);
    }

    #[test]
    fn uniform_attention_reproduces_binary_pipeline_bit_for_bit() {
        for n in [1, 3, 6] {
            let topo = HypergraphTopology::build(n).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(7 + n as u64);
            let mut params = HyperParams::init(n, 4, 3, &mut rng);
            params.attention = Matrix::zeros(8, 1);
            let q = random(3 * n, 4, &mut rng);
            let run = |mode| {
                let mut t = Tape::new();
                let g = topo.bind(&mut t);
                let bp = params.map(|m| t.leaf(m.clone()));
                let qv = t.leaf(q.clone());
                let out = multivariate_forward(&mut t, qv, &g, &bp, mode, &mut Dropout::disabled()).unwrap();
                t.value(out).clone()
            };
            assert_eq!(run(AttentionMode::PerLayer), run(AttentionMode::Off));
        }
    }
}
