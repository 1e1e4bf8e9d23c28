use nalgebra::DMatrix;
use rand::seq::index::sample as sample_distinct;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::hadamard::{fwht_columns, next_power_of_two};
use super::{debias_factor, RowSample};
use crate::error::{shape_err, Error, Result};
use crate::matcore::{factorize, leverage_from, DenseMatrix};

/// Subsampled randomized Hadamard transform `S H_N D_N / sqrt(N)` with
/// uniform row selection rescaled by `sqrt(N/m)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SrhtSketch {
    signs: Vec<f64>,
    indices: Vec<usize>,
    padded_dim: usize,
    input_dim: usize,
    debias_weights: Option<Vec<f64>>,
}

impl SrhtSketch {
    pub fn signs(&self) -> &[f64] {
        &self.signs
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn padded_dim(&self) -> usize {
        self.padded_dim
    }

    pub fn debias_weights(&self) -> Option<&[f64]> {
        self.debias_weights.as_deref()
    }

    /// `H_N D_N M_pad / sqrt(N)`: the rotated matrix rows are selected from.
    pub fn rotate(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if m.nrows() > self.padded_dim {
            return Err(shape_err(
                "srht",
                format!("at most {} rows", self.padded_dim),
                format!("{} rows", m.nrows()),
            ));
        }
        let scale = 1.0 / (self.padded_dim as f64).sqrt();
        let mut z = DMatrix::zeros(self.padded_dim, m.ncols());
        for c in 0..m.ncols() {
            for r in 0..m.nrows() {
                z[(r, c)] = self.signs[r] * m[(r, c)];
            }
        }
        fwht_columns(&mut z);
        z *= scale;
        Ok(z)
    }

    /// Leverage scores of the rotated design, with its numeric rank.
    pub fn rotated_leverage(&self, x: &DMatrix<f64>) -> Result<(Vec<f64>, usize)> {
        let z = self.rotate(x)?;
        let f = factorize(&z, None);
        Ok((leverage_from(&z, &f), f.numeric_rank))
    }

    /// Attaches the debias weights `1/sqrt(1 - l_i(HDX/sqrt N) N / m)` for
    /// the selected rows, turning the sketch into its debiased variant.
    pub fn with_debias(mut self, x: &DenseMatrix, floor: f64) -> Result<Self> {
        let (lev, _) = self.rotated_leverage(x)?;
        let m = self.indices.len() as f64;
        let n = self.padded_dim as f64;
        let weights = self
            .indices
            .iter()
            .map(|&i| debias_factor(lev[i] * n / m, floor, i))
            .collect::<Result<Vec<f64>>>()?;
        self.debias_weights = Some(weights);
        Ok(self)
    }

    /// Per-selected-row weight applied to the rotated matrix.
    pub(crate) fn row_weights(&self) -> Vec<f64> {
        let base = (self.padded_dim as f64 / self.indices.len() as f64).sqrt();
        match &self.debias_weights {
            Some(d) => d.iter().map(|w| base * w).collect(),
            None => vec![base; self.indices.len()],
        }
    }
}

/// Sparse sign sketch: each row has `s` distinct nonzeros `+-sqrt(n/(m s))`.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseSignSketch {
    positions: Vec<Vec<usize>>,
    signs: Vec<Vec<f64>>,
    magnitude: f64,
    input_dim: usize,
}

impl SparseSignSketch {
    pub fn positions(&self) -> &[Vec<usize>] {
        &self.positions
    }

    pub fn magnitude(&self) -> f64 {
        self.magnitude
    }

    pub fn nonzeros_per_row(&self) -> usize {
        self.positions.first().map_or(0, Vec::len)
    }
}

/// A sketching matrix `S` of shape `output_dim x input_dim`.
#[derive(Clone, Debug, PartialEq)]
pub enum SketchOperator {
    RowSampling {
        sample: RowSample,
        debiased: bool,
        input_dim: usize,
    },
    Srht(SrhtSketch),
    /// Dense matrix with i.i.d. `N(0, 1/m)` entries.
    Gaussian(DMatrix<f64>),
    SparseSign(SparseSignSketch),
}

impl SketchOperator {
    /// Wraps a row sample. The debiased flag requires attached debias weights.
    pub fn row_sampling(sample: RowSample, debiased: bool, input_dim: usize) -> Result<Self> {
        if debiased && sample.debias_weights.is_none() {
            return Err(Error::Undefined(
                "debiased row sampling without debias weights".into(),
            ));
        }
        if let Some(&i) = sample.indices.iter().find(|&&i| i >= input_dim) {
            return Err(shape_err(
                "row sampling",
                format!("indices below {input_dim}"),
                format!("index {i}"),
            ));
        }
        Ok(SketchOperator::RowSampling {
            sample,
            debiased,
            input_dim,
        })
    }

    pub fn input_dim(&self) -> usize {
        match self {
            SketchOperator::RowSampling { input_dim, .. } => *input_dim,
            SketchOperator::Srht(s) => s.input_dim,
            SketchOperator::Gaussian(g) => g.ncols(),
            SketchOperator::SparseSign(s) => s.input_dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            SketchOperator::RowSampling { sample, .. } => sample.len(),
            SketchOperator::Srht(s) => s.indices.len(),
            SketchOperator::Gaussian(g) => g.nrows(),
            SketchOperator::SparseSign(s) => s.positions.len(),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            SketchOperator::RowSampling { debiased: false, .. } => "row_sampling",
            SketchOperator::RowSampling { debiased: true, .. } => "debiased_row_sampling",
            SketchOperator::Srht(s) if s.debias_weights.is_some() => "debiased_srht",
            SketchOperator::Srht(_) => "srht",
            SketchOperator::Gaussian(_) => "gaussian",
            SketchOperator::SparseSign(_) => "sparse_sign",
        }
    }

    fn check_rows(&self, rows: usize) -> Result<()> {
        let ok = match self {
            SketchOperator::Srht(s) => rows >= s.input_dim && rows <= s.padded_dim,
            _ => rows == self.input_dim(),
        };
        if ok {
            Ok(())
        } else {
            Err(shape_err(
                "apply_sketch",
                format!("{} rows", self.input_dim()),
                format!("{rows} rows"),
            ))
        }
    }

    /// `S M`.
    pub fn apply(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_rows(m.nrows())?;
        Ok(match self {
            SketchOperator::RowSampling {
                sample, debiased, ..
            } => {
                let w = sample.weights(*debiased);
                DMatrix::from_fn(sample.len(), m.ncols(), |r, c| {
                    w[r] * m[(sample.indices[r], c)]
                })
            }
            SketchOperator::Srht(s) => {
                let z = s.rotate(m)?;
                let w = s.row_weights();
                DMatrix::from_fn(s.indices.len(), m.ncols(), |r, c| {
                    w[r] * z[(s.indices[r], c)]
                })
            }
            SketchOperator::Gaussian(g) => g * m,
            SketchOperator::SparseSign(s) => {
                let mut out = DMatrix::zeros(s.positions.len(), m.ncols());
                for (r, (pos, sg)) in s.positions.iter().zip(&s.signs).enumerate() {
                    for (&j, &v) in pos.iter().zip(sg) {
                        for c in 0..m.ncols() {
                            out[(r, c)] += v * s.magnitude * m[(j, c)];
                        }
                    }
                }
                out
            }
        })
    }

    /// `S^T A`, restricted to the first `input_dim` rows (for SRHT the padded
    /// coordinates are dropped).
    pub fn apply_transpose(&self, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if a.nrows() != self.output_dim() {
            return Err(shape_err(
                "apply_transpose",
                format!("{} rows", self.output_dim()),
                format!("{} rows", a.nrows()),
            ));
        }
        let n = self.input_dim();
        Ok(match self {
            SketchOperator::RowSampling {
                sample, debiased, ..
            } => {
                let w = sample.weights(*debiased);
                let mut out = DMatrix::zeros(n, a.ncols());
                for (r, &i) in sample.indices.iter().enumerate() {
                    for c in 0..a.ncols() {
                        out[(i, c)] += w[r] * a[(r, c)];
                    }
                }
                out
            }
            SketchOperator::Srht(s) => {
                let w = s.row_weights();
                let mut z = DMatrix::zeros(s.padded_dim, a.ncols());
                for (r, &i) in s.indices.iter().enumerate() {
                    for c in 0..a.ncols() {
                        z[(i, c)] += w[r] * a[(r, c)];
                    }
                }
                // H is symmetric, so (H D / sqrt N)^T = D H / sqrt N.
                fwht_columns(&mut z);
                let scale = 1.0 / (s.padded_dim as f64).sqrt();
                DMatrix::from_fn(n, a.ncols(), |r, c| s.signs[r] * scale * z[(r, c)])
            }
            SketchOperator::Gaussian(g) => g.transpose() * a,
            SketchOperator::SparseSign(s) => {
                let mut out = DMatrix::zeros(n, a.ncols());
                for (r, (pos, sg)) in s.positions.iter().zip(&s.signs).enumerate() {
                    for (&j, &v) in pos.iter().zip(sg) {
                        for c in 0..a.ncols() {
                            out[(j, c)] += v * s.magnitude * a[(r, c)];
                        }
                    }
                }
                out
            }
        })
    }

    /// Dense `m x input_dim` matrix of the operator.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.input_dim();
        self.apply(&DMatrix::identity(n, n))
            .expect("identity has input_dim rows")
    }
}

/// `S M` for a validated matrix.
pub fn apply_sketch(op: &SketchOperator, m: &DenseMatrix) -> Result<DenseMatrix> {
    op.apply(m.as_matrix()).map(DenseMatrix::wrap)
}

fn check_m(m: usize) -> Result<()> {
    if m == 0 {
        Err(Error::InvalidDimensions("sketch size m must be >= 1".into()))
    } else {
        Ok(())
    }
}

fn rademacher<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    if rng.random::<bool>() {
        1.0
    } else {
        -1.0
    }
}

/// SRHT for inputs with `n` rows; `N` is the next power of two.
pub fn srht_operator<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Result<SketchOperator> {
    check_m(m)?;
    if n == 0 {
        return Err(Error::InvalidDimensions("input dimension must be >= 1".into()));
    }
    let padded_dim = next_power_of_two(n);
    let signs = (0..padded_dim).map(|_| rademacher(rng)).collect();
    let indices = (0..m).map(|_| rng.random_range(0..padded_dim)).collect();
    Ok(SketchOperator::Srht(SrhtSketch {
        signs,
        indices,
        padded_dim,
        input_dim: n,
        debias_weights: None,
    }))
}

/// Dense Gaussian sketch with entry variance `1/m`.
pub fn gaussian_operator<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Result<SketchOperator> {
    check_m(m)?;
    if n == 0 {
        return Err(Error::InvalidDimensions("input dimension must be >= 1".into()));
    }
    let scale = 1.0 / (m as f64).sqrt();
    let mut g = DMatrix::zeros(m, n);
    for v in g.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *v = scale * z;
    }
    Ok(SketchOperator::Gaussian(g))
}

/// Sparse sign sketch with `s` nonzeros per row (a stand-in for LESS-type
/// embeddings, normalized so that `E[S^T S] = I`).
pub fn sparse_sign_operator<R: Rng + ?Sized>(
    n: usize,
    m: usize,
    s: usize,
    rng: &mut R,
) -> Result<SketchOperator> {
    check_m(m)?;
    if s == 0 || s > n {
        return Err(Error::InvalidSparsity { s, n });
    }
    let mut positions = Vec::with_capacity(m);
    let mut signs = Vec::with_capacity(m);
    for _ in 0..m {
        let mut pos = sample_distinct(rng, n, s).into_vec();
        pos.sort_unstable();
        signs.push((0..s).map(|_| rademacher(rng)).collect());
        positions.push(pos);
    }
    Ok(SketchOperator::SparseSign(SparseSignSketch {
        positions,
        signs,
        magnitude: (n as f64 / (m as f64 * s as f64)).sqrt(),
        input_dim: n,
    }))
}

/// Whether every eigenvalue of the symmetric matrix `g` lies in
/// `[1/(1+eps), 1+eps]`.
pub(crate) fn gram_within(g: &DMatrix<f64>, eps: f64) -> bool {
    let ev = g.clone().symmetric_eigenvalues();
    ev.iter()
        .all(|&l| l >= 1.0 / (1.0 + eps) && l <= 1.0 + eps)
}

/// True iff `(S U)^T (S U)` has spectrum in `[1/(1+eps), 1+eps]` for an
/// orthonormal basis `U`.
pub fn subspace_embedding_check(basis: &DMatrix<f64>, op: &SketchOperator, eps: f64) -> Result<bool> {
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::InvalidDimensions(format!("eps must be positive, got {eps}")));
    }
    let su = op.apply(basis)?;
    Ok(gram_within(&(su.transpose() * &su), eps))
}
