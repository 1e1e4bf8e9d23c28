//! Dense linear-algebra foundation: a checked matrix carrier, thin SVD,
//! pseudoinverses, leverage scores, orthogonal projections and the two
//! squared losses every estimator is measured with.
//!
//! Vectors are carried as single-column matrices.

use std::ops::Deref;

use nalgebra::DMatrix;

use crate::error::{shape_err, Error, Result};

/// A real rectangular matrix with at least one row and column and only
/// finite entries.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix(DMatrix<f64>);

impl DenseMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() == 0 || m.ncols() == 0 {
            return Err(Error::EmptyMatrix {
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                if !m[(i, j)].is_finite() {
                    return Err(Error::NonFinite { row: i, col: j });
                }
            }
        }
        Ok(DenseMatrix(m))
    }

    /// Builds a matrix from row-major entries.
    pub fn from_row_slice(rows: usize, cols: usize, entries: &[f64]) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(shape_err(
                "from_row_slice",
                format!("{} entries", rows * cols),
                format!("{} entries", entries.len()),
            ));
        }
        Self::new(DMatrix::from_row_slice(rows, cols, entries))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let ncols = rows.first().map_or(0, |r| r.len());
        for (i, r) in rows.iter().enumerate() {
            if r.len() != ncols {
                return Err(Error::RaggedRows {
                    row: i,
                    expected: ncols,
                    found: r.len(),
                });
            }
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::from_row_slice(rows.len(), ncols, &flat)
    }

    /// A single-column matrix.
    pub fn column_vector(values: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_column_slice(values.len(), 1, values))
    }

    pub fn identity(n: usize) -> Self {
        DenseMatrix(DMatrix::identity(n, n))
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix(DMatrix::zeros(rows, cols))
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    /// Entries in row-major order.
    pub fn to_row_major(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.rows() * self.cols());
        for i in 0..self.rows() {
            for j in 0..self.cols() {
                out.push(self.0[(i, j)]);
            }
        }
        out
    }

    pub fn transpose(&self) -> DenseMatrix {
        DenseMatrix(self.0.transpose())
    }

    /// Wraps a matrix produced by finite arithmetic on finite inputs.
    pub(crate) fn wrap(m: DMatrix<f64>) -> Self {
        debug_assert!(m.iter().all(|v| v.is_finite()), "non-finite result");
        DenseMatrix(m)
    }
}

impl Deref for DenseMatrix {
    type Target = DMatrix<f64>;

    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

impl AsRef<DMatrix<f64>> for DenseMatrix {
    fn as_ref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// Thin SVD truncated to the numeric rank: `X = basis * diag(sigma) * right_factor`.
#[derive(Clone, Debug)]
pub struct ThinFactorization {
    /// n x k, orthonormal columns spanning the numeric column space.
    pub basis: DMatrix<f64>,
    /// Nonincreasing, all above the rank tolerance.
    pub singular_values: Vec<f64>,
    /// k x p, orthonormal rows.
    pub right_factor: DMatrix<f64>,
    pub numeric_rank: usize,
}

impl ThinFactorization {
    /// `X = basis * diag(sigma) * right_factor`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut scaled = self.basis.clone();
        for (j, s) in self.singular_values.iter().enumerate() {
            scaled.column_mut(j).scale_mut(*s);
        }
        scaled * &self.right_factor
    }

    /// `X^dagger = right_factor^T * diag(1/sigma) * basis^T`.
    pub fn pseudoinverse(&self) -> DMatrix<f64> {
        let mut vt_scaled = self.right_factor.transpose();
        for (j, s) in self.singular_values.iter().enumerate() {
            vt_scaled.column_mut(j).scale_mut(1.0 / s);
        }
        vt_scaled * self.basis.transpose()
    }

    /// `X^dagger * b` without forming the pseudoinverse.
    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut coef = self.basis.transpose() * b;
        for (i, s) in self.singular_values.iter().enumerate() {
            coef.row_mut(i).scale_mut(1.0 / s);
        }
        self.right_factor.transpose() * coef
    }

    /// Squared row norms of the basis.
    pub fn row_leverage(&self) -> Vec<f64> {
        (0..self.basis.nrows())
            .map(|i| self.basis.row(i).norm_squared().clamp(0.0, 1.0))
            .collect()
    }
}

/// Default numerical-rank threshold: `eps * max(rows, cols) * sigma_max`.
pub fn default_rank_tol(rows: usize, cols: usize, sigma_max: f64) -> f64 {
    f64::EPSILON * rows.max(cols) as f64 * sigma_max
}

/// Thin SVD of any finite matrix, truncated at `rank_tol` (default when `None`).
pub(crate) fn factorize(x: &DMatrix<f64>, rank_tol: Option<f64>) -> ThinFactorization {
    let (n, p) = x.shape();
    let svd = x.clone().svd(true, true);
    let u = svd.u.expect("left singular vectors requested");
    let v_t = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sigma_max = order.first().map_or(0.0, |&i| svd.singular_values[i]);
    let tol = rank_tol.unwrap_or_else(|| default_rank_tol(n, p, sigma_max));
    let kept: Vec<usize> = order
        .into_iter()
        .filter(|&i| svd.singular_values[i] > tol && svd.singular_values[i] > 0.0)
        .collect();
    let k = kept.len();
    let basis = DMatrix::from_fn(n, k, |i, j| u[(i, kept[j])]);
    let right_factor = DMatrix::from_fn(k, p, |i, j| v_t[(kept[i], j)]);
    let singular_values = kept.iter().map(|&i| svd.singular_values[i]).collect();
    ThinFactorization {
        basis,
        singular_values,
        right_factor,
        numeric_rank: k,
    }
}

/// Thin SVD truncated to the numeric rank.
///
/// `rank_tol = None` selects [`default_rank_tol`]. Negative tolerances are
/// rejected.
pub fn thin_factorize(x: &DenseMatrix, rank_tol: Option<f64>) -> Result<ThinFactorization> {
    check_tol(rank_tol)?;
    Ok(factorize(x, rank_tol))
}

fn check_tol(rank_tol: Option<f64>) -> Result<()> {
    match rank_tol {
        Some(t) if !(t >= 0.0 && t.is_finite()) => Err(Error::Undefined(format!(
            "rank tolerance must be finite and nonnegative, got {t}"
        ))),
        _ => Ok(()),
    }
}

/// Moore-Penrose pseudoinverse.
pub fn pseudoinverse(x: &DenseMatrix, rank_tol: Option<f64>) -> Result<DenseMatrix> {
    check_tol(rank_tol)?;
    Ok(DenseMatrix::wrap(factorize(x, rank_tol).pseudoinverse()))
}

pub(crate) fn pinv(x: &DMatrix<f64>) -> DMatrix<f64> {
    factorize(x, None).pseudoinverse()
}

/// Leverage scores computed from a factorization of `x`. Rows of `x` that
/// are exactly zero get exactly zero leverage.
pub(crate) fn leverage_from(x: &DMatrix<f64>, f: &ThinFactorization) -> Vec<f64> {
    let mut lev = f.row_leverage();
    for (i, l) in lev.iter_mut().enumerate() {
        if x.row(i).iter().all(|v| *v == 0.0) {
            *l = 0.0;
        }
    }
    lev
}

/// Squared row norms of an orthonormal basis for the numeric column space.
pub fn leverage_scores(x: &DenseMatrix) -> Vec<f64> {
    let f = factorize(x, None);
    leverage_from(x, &f)
}

/// Orthogonal projection onto the column space and its complement.
pub fn orthogonal_projection(x: &DenseMatrix) -> (DenseMatrix, DenseMatrix) {
    let f = factorize(x, None);
    let p = &f.basis * f.basis.transpose();
    let n = x.rows();
    let perp = DMatrix::identity(n, n) - &p;
    (DenseMatrix::wrap(p), DenseMatrix::wrap(perp))
}

/// `||y - X beta||^2`.
pub fn loss_ols(x: &DenseMatrix, y: &DenseMatrix, beta: &DenseMatrix) -> Result<f64> {
    if y.rows() != x.rows() || y.cols() != 1 {
        return Err(shape_err(
            "loss_ols: y",
            format!("{}x1", x.rows()),
            format!("{}x{}", y.rows(), y.cols()),
        ));
    }
    if beta.rows() != x.cols() || beta.cols() != 1 {
        return Err(shape_err(
            "loss_ols: beta",
            format!("{}x1", x.cols()),
            format!("{}x{}", beta.rows(), beta.cols()),
        ));
    }
    Ok((y.as_matrix() - x.as_matrix() * beta.as_matrix()).norm_squared())
}

/// `||C U R - X||_F^2`.
pub fn loss_cur(x: &DenseMatrix, c: &DenseMatrix, u: &DenseMatrix, r: &DenseMatrix) -> Result<f64> {
    check_cur_shapes(x, c, r)?;
    if u.rows() != c.cols() || u.cols() != r.rows() {
        return Err(shape_err(
            "loss_cur: U",
            format!("{}x{}", c.cols(), r.rows()),
            format!("{}x{}", u.rows(), u.cols()),
        ));
    }
    Ok((c.as_matrix() * u.as_matrix() * r.as_matrix() - x.as_matrix()).norm_squared())
}

pub(crate) fn check_cur_shapes(x: &DenseMatrix, c: &DenseMatrix, r: &DenseMatrix) -> Result<()> {
    if c.rows() != x.rows() {
        return Err(shape_err(
            "CUR: C rows",
            x.rows().to_string(),
            c.rows().to_string(),
        ));
    }
    if r.cols() != x.cols() {
        return Err(shape_err(
            "CUR: R cols",
            x.cols().to_string(),
            r.cols().to_string(),
        ));
    }
    Ok(())
}

/// Largest absolute entry; zero for an empty matrix.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn dm(rows: usize, cols: usize, v: &[f64]) -> DenseMatrix {
        DenseMatrix::from_row_slice(rows, cols, v).unwrap()
    }

    /// The 8x4 lower-bound design with k = 1.
    fn block_design() -> DenseMatrix {
        let h = 3f64.sqrt() / 2.0;
        let mut m = DMatrix::zeros(8, 4);
        for j in 0..4 {
            m[(2 * j, j)] = 0.5;
            m[(2 * j + 1, j)] = h;
        }
        DenseMatrix::new(m).unwrap()
    }

    #[test]
    fn rejects_non_finite_and_empty() {
        assert_eq!(
            DenseMatrix::from_row_slice(1, 2, &[1.0, f64::NAN]),
            Err(Error::NonFinite { row: 0, col: 1 })
        );
        assert!(matches!(
            DenseMatrix::new(DMatrix::zeros(0, 3)),
            Err(Error::EmptyMatrix { .. })
        ));
        assert!(matches!(
            DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0]]),
            Err(Error::RaggedRows { row: 1, .. })
        ));
    }

    #[test]
    fn factorize_identity_and_embedded_identity() {
        let f = thin_factorize(&DenseMatrix::identity(3), None).unwrap();
        assert_eq!(f.numeric_rank, 3);
        for s in &f.singular_values {
            assert_abs_diff_eq!(*s, 1.0, epsilon = 1e-14);
        }
        let x = dm(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let f = thin_factorize(&x, None).unwrap();
        assert_eq!(f.numeric_rank, 2);
        // basis spans e1, e2: third row is zero
        assert_abs_diff_eq!(f.basis.row(2).norm(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn factorize_block_design_has_unit_singular_values() {
        let f = thin_factorize(&block_design(), None).unwrap();
        assert_eq!(f.numeric_rank, 4);
        for s in &f.singular_values {
            assert_abs_diff_eq!(*s, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn rank_deficient_truncates() {
        let x = dm(3, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0, 1.0, 0.0, 1.0]);
        let f = thin_factorize(&x, None).unwrap();
        assert_eq!(f.numeric_rank, 2);
        let err = (f.reconstruct() - x.as_matrix()).norm() / x.norm();
        assert!(err < 1e-8);
        let lev = leverage_scores(&x);
        assert_abs_diff_eq!(lev.iter().sum::<f64>(), 2.0, epsilon = 1e-8);
        assert!(thin_factorize(&x, Some(-1.0)).is_err());
    }

    #[test]
    fn pseudoinverse_examples() {
        let x = dm(2, 2, &[2.0, 0.0, 0.0, 4.0]);
        let xp = pseudoinverse(&x, None).unwrap();
        assert_abs_diff_eq!(xp[(0, 0)], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(xp[(1, 1)], 0.25, epsilon = 1e-14);
        assert_abs_diff_eq!(xp[(0, 1)], 0.0, epsilon = 1e-14);

        let ones = dm(3, 1, &[1.0, 1.0, 1.0]);
        let xp = pseudoinverse(&ones, None).unwrap();
        assert_eq!(xp.shape(), (1, 3));
        for v in xp.iter() {
            assert_abs_diff_eq!(*v, 1.0 / 3.0, epsilon = 1e-14);
        }

        let zero = DenseMatrix::zeros(2, 2);
        let xp = pseudoinverse(&zero, None).unwrap();
        assert_eq!(max_abs(&xp), 0.0);
    }

    #[test]
    fn leverage_examples() {
        let x = dm(4, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let lev = leverage_scores(&x);
        for (l, e) in lev.iter().zip([1.0, 1.0, 0.0, 0.0]) {
            assert_abs_diff_eq!(*l, e, epsilon = 1e-14);
        }
        let lev = leverage_scores(&dm(3, 1, &[1.0, 1.0, 1.0]));
        for l in lev {
            assert_abs_diff_eq!(l, 1.0 / 3.0, epsilon = 1e-14);
        }
        let lev = leverage_scores(&block_design());
        for (i, l) in lev.iter().enumerate() {
            let expected = if i % 2 == 0 { 0.25 } else { 0.75 };
            assert_abs_diff_eq!(*l, expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn projection_examples() {
        let (p, perp) = orthogonal_projection(&DenseMatrix::identity(2));
        assert!(max_abs(&(p.as_matrix() - DMatrix::identity(2, 2))) < 1e-14);
        assert!(max_abs(&perp) < 1e-14);

        let (p, _) = orthogonal_projection(&dm(2, 1, &[1.0, 1.0]));
        for v in p.iter() {
            assert_abs_diff_eq!(*v, 0.5, epsilon = 1e-14);
        }
        let (p, _) = orthogonal_projection(&dm(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]));
        let expected = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 1.0, 0.0]));
        assert!(max_abs(&(p.as_matrix() - expected)) < 1e-14);
    }

    #[test]
    fn loss_examples() {
        let x = dm(2, 1, &[1.0, 1.0]);
        let y = dm(2, 1, &[0.0, 2.0]);
        let b = dm(1, 1, &[1.0]);
        assert_abs_diff_eq!(loss_ols(&x, &y, &b).unwrap(), 2.0, epsilon = 1e-14);
        let yfit = dm(2, 1, &[3.0, 3.0]);
        assert_abs_diff_eq!(loss_ols(&x, &yfit, &dm(1, 1, &[3.0])).unwrap(), 0.0);
        assert!(matches!(
            loss_ols(&x, &dm(3, 1, &[0.0; 3]), &b),
            Err(Error::ShapeMismatch { .. })
        ));

        let i3 = DenseMatrix::identity(3);
        let c = dm(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let r = dm(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let u = DenseMatrix::identity(2);
        assert_abs_diff_eq!(loss_cur(&i3, &c, &u, &r).unwrap(), 1.0, epsilon = 1e-14);
        assert!(loss_cur(&i3, &c, &DenseMatrix::identity(3), &r).is_err());
    }

    #[test]
    fn loss_cur_rank_one_reconstructs() {
        let u = [2.0, -1.0, 0.5];
        let v = [1.5, 3.0, -2.0, 1.0];
        let x = DenseMatrix::new(DMatrix::from_fn(3, 4, |i, j| u[i] * v[j])).unwrap();
        let c = DenseMatrix::new(x.columns(0, 1).into_owned()).unwrap();
        let r = DenseMatrix::new(x.as_matrix().rows(0, 1).into_owned()).unwrap();
        let core = pinv(&c) * x.as_matrix() * pinv(&r);
        let core = DenseMatrix::new(core).unwrap();
        assert!(loss_cur(&x, &c, &core, &r).unwrap() < 1e-20);
    }

    fn random_matrix(n: usize, p: usize) -> impl Strategy<Value = DMatrix<f64>> {
        proptest::collection::vec(-3.0..3.0f64, n * p)
            .prop_map(move |v| DMatrix::from_row_slice(n, p, &v))
    }

    proptest! {
        #[test]
        fn penrose_identities(x in random_matrix(7, 3)) {
            let xm = DenseMatrix::new(x.clone()).unwrap();
            let xp = pseudoinverse(&xm, None).unwrap();
            let xp = xp.as_matrix();
            let scale = 1.0 + x.norm() * xp.norm();
            prop_assert!(max_abs(&(&x * xp * &x - &x)) < 1e-8 * scale * x.norm());
            prop_assert!(max_abs(&(xp * &x * xp - xp)) < 1e-8 * scale * xp.norm());
            let a = &x * xp;
            prop_assert!(max_abs(&(&a - a.transpose())) < 1e-8 * scale);
            let b = xp * &x;
            prop_assert!(max_abs(&(&b - b.transpose())) < 1e-8 * scale);
            // full column rank almost surely
            prop_assert!(max_abs(&(b - DMatrix::identity(3, 3))) < 1e-8 * scale);
        }

        #[test]
        fn leverage_sum_and_right_invariance(x in random_matrix(9, 3), t in random_matrix(3, 3)) {
            let xm = DenseMatrix::new(x.clone()).unwrap();
            let f = thin_factorize(&xm, None).unwrap();
            let lev = leverage_scores(&xm);
            prop_assert!((lev.iter().sum::<f64>() - f.numeric_rank as f64).abs() < 1e-8);
            prop_assert!(lev.iter().all(|l| (0.0..=1.0).contains(l)));
            let cond = {
                let s = t.clone().singular_values();
                s.max() / s.min()
            };
            prop_assume!(cond < 1e4);
            let xt = DenseMatrix::new(&x * &t).unwrap();
            let lev2 = leverage_scores(&xt);
            for (a, b) in lev.iter().zip(&lev2) {
                prop_assert!((a - b).abs() < 1e-8);
            }
        }

        #[test]
        fn projection_is_symmetric_idempotent(x in random_matrix(6, 2)) {
            let (p, perp) = orthogonal_projection(&DenseMatrix::new(x).unwrap());
            let p = p.as_matrix();
            let perp = perp.as_matrix();
            prop_assert!(max_abs(&(p * p - p)) < 1e-8);
            prop_assert!(max_abs(&(perp * perp - perp)) < 1e-8);
            prop_assert!(max_abs(&(p * perp)) < 1e-8);
            prop_assert!(max_abs(&(p - p.transpose())) < 1e-8);
            prop_assert!(max_abs(&(p + perp - DMatrix::identity(6, 6))) < 1e-8);
        }

        #[test]
        fn loss_pythagoras(x in random_matrix(8, 3), y in random_matrix(8, 1), b in random_matrix(3, 1)) {
            let xm = DenseMatrix::new(x.clone()).unwrap();
            let ym = DenseMatrix::new(y.clone()).unwrap();
            let bm = DenseMatrix::new(b.clone()).unwrap();
            let bols = DenseMatrix::new(pinv(&x) * &y).unwrap();
            let lhs = loss_ols(&xm, &ym, &bm).unwrap() - loss_ols(&xm, &ym, &bols).unwrap();
            let rhs = (&x * (&b - bols.as_matrix())).norm_squared();
            prop_assert!((lhs - rhs).abs() < 1e-8 * (1.0 + rhs));
        }
    }
}
