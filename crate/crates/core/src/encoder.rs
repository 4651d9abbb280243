//! Multi-feature encoder: one affine projection per feature type plus a
//! learned per-student embedding shared by all three projections.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Tape, Var};

/// The three per-student feature types, in node order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Emotional,
    Attentional,
    UpperBody,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 3] = [FeatureKind::Emotional, FeatureKind::Attentional, FeatureKind::UpperBody];

    /// Position of this type inside a student's node triplet.
    pub fn offset(self) -> usize {
        match self {
            FeatureKind::Emotional => 0,
            FeatureKind::Attentional => 1,
            FeatureKind::UpperBody => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Emotional => "emotional",
            FeatureKind::Attentional => "attentional",
            FeatureKind::UpperBody => "upper_body",
        }
    }
}

/// Raw feature widths, declared once per dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureDims {
    pub emotional: usize,
    pub attentional: usize,
    pub upper_body: usize,
}

impl FeatureDims {
    pub fn get(&self, kind: FeatureKind) -> usize {
        match kind {
            FeatureKind::Emotional => self.emotional,
            FeatureKind::Attentional => self.attentional,
            FeatureKind::UpperBody => self.upper_body,
        }
    }
}

impl Default for FeatureDims {
    fn default() -> Self {
        Self { emotional: 512, attentional: 49, upper_body: 34 }
    }
}

/// One student's pre-extracted feature vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawStudentFeatures {
    pub emotional: Vec<f64>,
    pub attentional: Vec<f64>,
    pub upper_body: Vec<f64>,
}

impl RawStudentFeatures {
    pub fn get(&self, kind: FeatureKind) -> &[f64] {
        match kind {
            FeatureKind::Emotional => &self.emotional,
            FeatureKind::Attentional => &self.attentional,
            FeatureKind::UpperBody => &self.upper_body,
        }
    }
}

/// Affine map `x W + b` from one feature type into the hidden space.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection<T> {
    /// `d_t × D_h`
    pub weight: T,
    /// `1 × D_h`
    pub bias: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams<T> {
    pub emotional: Projection<T>,
    pub attentional: Projection<T>,
    pub upper_body: Projection<T>,
    /// Student embedding table, `N_max × D_h`.
    pub student_embedding: T,
}

impl<T> EncoderParams<T> {
    pub fn projection(&self, kind: FeatureKind) -> &Projection<T> {
        match kind {
            FeatureKind::Emotional => &self.emotional,
            FeatureKind::Attentional => &self.attentional,
            FeatureKind::UpperBody => &self.upper_body,
        }
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> EncoderParams<U> {
        let mut proj = |p: &Projection<T>| Projection { weight: f(&p.weight), bias: f(&p.bias) };
        EncoderParams {
            emotional: proj(&self.emotional),
            attentional: proj(&self.attentional),
            upper_body: proj(&self.upper_body),
            student_embedding: f(&self.student_embedding),
        }
    }
}

/// Uniform(±1/√fan_in) weights.
pub(crate) fn uniform_init(rows: usize, cols: usize, fan_in: usize, rng: &mut impl Rng) -> Matrix {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Matrix::from_fn(rows, cols, |_, _| dist.sample(rng))
}

impl EncoderParams<Matrix> {
    pub fn init(dims: FeatureDims, hidden: usize, max_students: usize, rng: &mut impl Rng) -> Self {
        let mut proj =
            |d: usize| Projection { weight: uniform_init(d, hidden, d, rng), bias: Matrix::zeros(1, hidden) };
        let emotional = proj(dims.emotional);
        let attentional = proj(dims.attentional);
        let upper_body = proj(dims.upper_body);
        let normal = Normal::new(0.0, 0.02).expect("valid std");
        let student_embedding = Matrix::from_fn(max_students, hidden, |_, _| normal.sample(rng));
        Self { emotional, attentional, upper_body, student_embedding }
    }
}

/// Per-type encoder inputs for a whole classroom: each an `N × d_t` matrix.
#[derive(Clone, Copy, Debug)]
pub struct EncoderInput {
    pub emotional: Var,
    pub attentional: Var,
    pub upper_body: Var,
}

impl EncoderInput {
    pub fn get(&self, kind: FeatureKind) -> Var {
        match kind {
            FeatureKind::Emotional => self.emotional,
            FeatureKind::Attentional => self.attentional,
            FeatureKind::UpperBody => self.upper_body,
        }
    }
}

/// `c^t = x^t W_t + b_t` for every student row of `inputs`.
pub fn project(tape: &mut Tape, inputs: Var, projection: &Projection<Var>) -> Result<Var> {
    let xw = tape.matmul(inputs, projection.weight)?;
    tape.add_row_broadcast(xw, projection.bias)
}

/// Looks up embedding rows for the given student ordinals. The one-hot
/// product reduces to a row gather, so only those rows receive gradient.
pub fn student_embedding(tape: &mut Tape, table: Var, students: &[usize]) -> Result<Var> {
    let len = tape.value(table).rows();
    if let Some(&bad) = students.iter().find(|&&i| i >= len) {
        return Err(Error::IndexOutOfRange { what: "student", index: bad, len });
    }
    tape.select_rows(table, students)
}

/// Encodes a classroom: returns `ĉ^t = c^t + ŝ` for each type, each `N × D_h`,
/// in [`FeatureKind::ALL`] order. A `dropped` type contributes no projection,
/// leaving only the student embedding in its slot.
pub fn encode(
    tape: &mut Tape,
    input: &EncoderInput,
    students: &[usize],
    params: &EncoderParams<Var>,
    dropped: Option<FeatureKind>,
) -> Result<[Var; 3]> {
    let embedding = student_embedding(tape, params.student_embedding, students)?;
    let mut out = [embedding; 3];
    for kind in FeatureKind::ALL {
        let x = input.get(kind);
        let rows = tape.value(x).rows();
        if rows != students.len() {
            return Err(Error::ShapeMismatch { op: "encode", left: tape.value(x).shape(), right: (students.len(), 1) });
        }
        if dropped == Some(kind) {
            continue;
        }
        let c = project(tape, x, params.projection(kind))?;
        out[kind.offset()] = tape.add(c, embedding)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bind(tape: &mut Tape, p: &EncoderParams<Matrix>) -> EncoderParams<Var> {
        p.map(|m| tape.leaf(m.clone()))
    }

    fn small_params(seed: u64) -> (FeatureDims, EncoderParams<Matrix>) {
        let dims = FeatureDims { emotional: 4, attentional: 3, upper_body: 2 };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = EncoderParams::init(dims, 4, 5, &mut rng);
        for proj in [&mut p.emotional, &mut p.attentional, &mut p.upper_body] {
            proj.bias = uniform_init(1, 4, 1, &mut rng);
        }
        (dims, p)
    }

    fn random_rows(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        uniform_init(rows, cols, 1, rng)
    }

    #[test]
    fn zero_input_projects_to_bias() {
        let (dims, p) = small_params(1);
        let mut t = Tape::new();
        let bp = bind(&mut t, &p);
        let x = t.leaf(Matrix::zeros(1, dims.emotional));
        let c = project(&mut t, x, &bp.emotional).unwrap();
        assert_eq!(t.value(c), &p.emotional.bias);
    }

    #[test]
    fn identity_projection_returns_input() {
        let mut t = Tape::new();
        let proj = Projection { weight: t.leaf(Matrix::identity(3)), bias: t.leaf(Matrix::zeros(1, 3)) };
        let xm = Matrix::row_vector(&[0.5, -2.0, 7.0]);
        let x = t.leaf(xm.clone());
        let c = project(&mut t, x, &proj).unwrap();
        assert_eq!(t.value(c), &xm);
    }

    #[test]
    fn projection_matches_mat_vec_oracle() {
        let (dims, p) = small_params(2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_rows(1, dims.attentional, &mut rng);
        let mut t = Tape::new();
        let bp = bind(&mut t, &p);
        let xv = t.leaf(x.clone());
        let c = project(&mut t, xv, &bp.attentional).unwrap();
        let w = &p.attentional.weight;
        for j in 0..4 {
            let expected: f64 =
                (0..dims.attentional).map(|k| x.get(0, k) * w.get(k, j)).sum::<f64>() + p.attentional.bias.get(0, j);
            assert!((t.value(c).get(0, j) - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn embedding_selects_rows_and_routes_gradient_to_that_row() {
        let (_, p) = small_params(4);
        let mut t = Tape::new();
        let table = t.leaf(p.student_embedding.clone());
        let e0 = student_embedding(&mut t, table, &[0]).unwrap();
        assert_eq!(t.value(e0).row(0), p.student_embedding.row(0));
        let e1 = student_embedding(&mut t, table, &[1]).unwrap();
        assert_ne!(t.value(e0), t.value(e1));

        let e3 = student_embedding(&mut t, table, &[3]).unwrap();
        let s = t.sum(e3);
        let g = t.backward(s).unwrap().wrt(table);
        for r in 0..g.rows() {
            let expected = if r == 3 { 1.0 } else { 0.0 };
            assert!(g.row(r).iter().all(|v| *v == expected));
        }
        assert!(matches!(student_embedding(&mut t, table, &[5]), Err(Error::IndexOutOfRange { index: 5, .. })));
    }

    fn encode_one(p: &EncoderParams<Matrix>, x: [&Matrix; 3], students: &[usize]) -> [Matrix; 3] {
        let mut t = Tape::new();
        let bp = bind(&mut t, p);
        let input = EncoderInput {
            emotional: t.leaf(x[0].clone()),
            attentional: t.leaf(x[1].clone()),
            upper_body: t.leaf(x[2].clone()),
        };
        let out = encode(&mut t, &input, students, &bp, None).unwrap();
        out.map(|v| t.value(v).clone())
    }

    #[test]
    fn zero_embedding_and_zero_projection_cases() {
        let (dims, mut p) = small_params(5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let xs = [
            random_rows(2, dims.emotional, &mut rng),
            random_rows(2, dims.attentional, &mut rng),
            random_rows(2, dims.upper_body, &mut rng),
        ];
        let mut no_embed = p.clone();
        no_embed.student_embedding = Matrix::zeros(5, 4);
        let enc = encode_one(&no_embed, [&xs[0], &xs[1], &xs[2]], &[0, 1]);
        for kind in FeatureKind::ALL {
            let proj = p.projection(kind);
            let c = xs[kind.offset()].matmul(&proj.weight).unwrap();
            let c = Matrix::from_fn(2, 4, |r, j| c.get(r, j) + proj.bias.get(0, j));
            assert!(enc[kind.offset()].max_abs_diff(&c) < 1e-15);
        }

        for proj in [&mut p.emotional, &mut p.attentional, &mut p.upper_body] {
            proj.weight = Matrix::zeros(proj.weight.rows(), 4);
            proj.bias = Matrix::zeros(1, 4);
        }
        let enc = encode_one(&p, [&xs[0], &xs[1], &xs[2]], &[2, 4]);
        let s = p.student_embedding.select_rows(&[2, 4]).unwrap();
        for e in &enc {
            assert_eq!(e, &s);
        }
    }

    #[test]
    fn encode_matches_composed_oracle_and_shares_embedding() {
        let (dims, p) = small_params(7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let xs = [
            random_rows(3, dims.emotional, &mut rng),
            random_rows(3, dims.attentional, &mut rng),
            random_rows(3, dims.upper_body, &mut rng),
        ];
        let students = [4, 0, 2];
        let enc = encode_one(&p, [&xs[0], &xs[1], &xs[2]], &students);
        let mut deltas = Vec::new();
        for kind in FeatureKind::ALL {
            let proj = p.projection(kind);
            let x = &xs[kind.offset()];
            let oracle = Matrix::from_fn(3, 4, |r, j| {
                let c: f64 =
                    (0..x.cols()).map(|k| x.get(r, k) * proj.weight.get(k, j)).sum::<f64>() + proj.bias.get(0, j);
                c + p.student_embedding.get(students[r], j)
            });
            assert!(enc[kind.offset()].max_abs_diff(&oracle) < 1e-14);
            let c = Matrix::from_fn(3, 4, |r, j| {
                (0..x.cols()).map(|k| x.get(r, k) * proj.weight.get(k, j)).sum::<f64>() + proj.bias.get(0, j)
            });
            deltas.push(enc[kind.offset()].sub(&c).unwrap());
        }
        assert!(deltas[0].max_abs_diff(&deltas[1]) < 1e-15);
        assert!(deltas[1].max_abs_diff(&deltas[2]) < 1e-15);
    }

    #[test]
    fn encoder_difference_is_linear_in_the_perturbation() {
        let (dims, p) = small_params(9);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = [
            random_rows(1, dims.emotional, &mut rng),
            random_rows(1, dims.attentional, &mut rng),
            random_rows(1, dims.upper_body, &mut rng),
        ];
        let delta = random_rows(1, dims.emotional, &mut rng);
        let shifted = x[0].add(&delta).unwrap();
        let a = encode_one(&p, [&x[0], &x[1], &x[2]], &[1]);
        let b = encode_one(&p, [&shifted, &x[1], &x[2]], &[1]);
        let expected = delta.matmul(&p.emotional.weight).unwrap();
        assert!(b[0].sub(&a[0]).unwrap().max_abs_diff(&expected) < 1e-14);
        assert_eq!(a[1], b[1]);
    }

    #[test]
    fn dropped_type_keeps_only_embedding() {
        let (dims, p) = small_params(11);
        let mut t = Tape::new();
        let bp = bind(&mut t, &p);
        let input = EncoderInput {
            emotional: t.leaf(Matrix::ones(1, dims.emotional)),
            attentional: t.leaf(Matrix::ones(1, dims.attentional)),
            upper_body: t.leaf(Matrix::ones(1, dims.upper_body)),
        };
        let out = encode(&mut t, &input, &[0], &bp, Some(FeatureKind::Emotional)).unwrap();
        assert_eq!(t.value(out[0]).row(0), p.student_embedding.row(0));
        let s0 = t.sum(out[0]);
        let s1 = t.sum(out[1]);
        let total = t.add(s0, s1).unwrap();
        let g = t.backward(total).unwrap();
        assert!(g.get(bp.emotional.weight).is_none());
        assert!(g.get(bp.attentional.weight).is_some());
    }
}
