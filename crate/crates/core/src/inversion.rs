//! Inversion bias of sketched Gram matrices.
//!
//! For row sampling, `E[(X~^T X~)^{-1}]` is close to `(X^T D X)^{-1}` where
//! `D` solves `D_ii = 1 / (1 + x_i^T (X^T D X)^{-1} x_i / (m pi_i))`. For a
//! Gaussian sketch the correction is the scalar `m / (m - p - 1)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{shape_err, Error, Result};
use crate::matcore::DenseMatrix;
use crate::sketching::SamplingPlan;

/// Solver settings for [`solve_fixed_point_d`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FixedPointOptions {
    /// Stop once the max-abs change between iterates is at most this.
    pub tol: f64,
    pub max_iters: usize,
    /// Relaxation factor in `(0, 1]`; `1` is the plain iteration.
    pub damping: f64,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        FixedPointOptions {
            tol: 1e-10,
            max_iters: 1000,
            damping: 1.0,
        }
    }
}

/// Converged diagonal `D` with iteration diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct FixedPointDiag {
    pub d: Vec<f64>,
    pub iterations: usize,
    /// Max-abs change of the last step.
    pub residual: f64,
    /// Steps after the first whose residual exceeded the previous one.
    pub nonmonotone_steps: usize,
}

impl FixedPointDiag {
    /// `(X^T D X)^{-1}`.
    pub fn inverse_gram(&self, x: &DenseMatrix) -> Result<DMatrix<f64>> {
        let g = weighted_gram(x, &self.d);
        g.clone()
            .cholesky()
            .map(|c| c.inverse())
            .ok_or(Error::SingularIntermediate {
                iteration: self.iterations,
            })
    }
}

fn weighted_gram(x: &DMatrix<f64>, d: &[f64]) -> DMatrix<f64> {
    let scaled = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| d[i].sqrt() * x[(i, j)]);
    scaled.transpose() * scaled
}

/// Solves the fixed-point equation for `D` by iteration from `D = I`.
///
/// Rows with `pi_i = 0` (and `x_i != 0`) are fixed at `D_ii = 0`; zero rows
/// at `D_ii = 1`.
pub fn solve_fixed_point_d(
    x: &DenseMatrix,
    plan: &SamplingPlan,
    m: usize,
    opts: FixedPointOptions,
) -> Result<FixedPointDiag> {
    let n = x.rows();
    if plan.len() != n {
        return Err(shape_err(
            "solve_fixed_point_d",
            format!("plan over {n} rows"),
            format!("plan over {} rows", plan.len()),
        ));
    }
    if m == 0 {
        return Err(Error::InvalidDimensions("sketch size m must be >= 1".into()));
    }
    if !(opts.damping > 0.0 && opts.damping <= 1.0) {
        return Err(Error::InvalidDimensions(format!(
            "damping {} outside (0, 1]",
            opts.damping
        )));
    }
    let pi = plan.probabilities();
    let zero_row: Vec<bool> = (0..n).map(|i| x.row(i).iter().all(|v| *v == 0.0)).collect();
    let mut d = vec![1.0; n];
    let mut prev_residual = f64::INFINITY;
    let mut nonmonotone = 0;
    for it in 1..=opts.max_iters {
        let chol = weighted_gram(x, &d)
            .cholesky()
            .ok_or(Error::SingularIntermediate { iteration: it })?;
        let mut residual = 0.0_f64;
        let mut next = vec![0.0; n];
        for i in 0..n {
            let target = if zero_row[i] {
                1.0
            } else if pi[i] == 0.0 {
                0.0
            } else {
                let xi = DVector::from_iterator(x.ncols(), x.row(i).iter().copied());
                let z = chol.l().solve_lower_triangular(&xi).expect("nonsingular factor");
                1.0 / (1.0 + z.norm_squared() / (m as f64 * pi[i]))
            };
            next[i] = (1.0 - opts.damping) * d[i] + opts.damping * target;
            residual = residual.max((next[i] - d[i]).abs());
        }
        d = next;
        if it > 2 && residual > prev_residual {
            nonmonotone += 1;
        }
        prev_residual = residual;
        if residual <= opts.tol {
            return Ok(FixedPointDiag {
                d,
                iterations: it,
                residual,
                nonmonotone_steps: nonmonotone,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iters,
        residual: prev_residual,
    })
}

/// `m / (m - p - 1)`, the exact inverse-Wishart scale for Gaussian sketches.
pub fn gaussian_inverse_scale(m: usize, p: usize) -> Result<f64> {
    if m <= p + 1 {
        return Err(Error::Undefined(format!(
            "Gaussian inverse scale needs m > p + 1 (m = {m}, p = {p})"
        )));
    }
    Ok(m as f64 / (m - p - 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sketching::{build_distribution, PlanKind};
    use approx::assert_abs_diff_eq;

    fn block_design() -> DenseMatrix {
        let h = 3f64.sqrt() / 2.0;
        let mut m = DMatrix::zeros(8, 4);
        for j in 0..4 {
            m[(2 * j, j)] = 0.5;
            m[(2 * j + 1, j)] = h;
        }
        DenseMatrix::new(m).unwrap()
    }

    fn varied(n: usize, p: usize) -> DenseMatrix {
        DenseMatrix::new(DMatrix::from_fn(n, p, |i, j| {
            (((i + 1) * (j + 3)) as f64).sin() * (1.0 + (i % 5) as f64)
        }))
        .unwrap()
    }

    #[test]
    fn exact_leverage_gives_scaled_identity() {
        let x = block_design();
        let plan = build_distribution(&x, PlanKind::ExactLeverage).unwrap();
        let sol = solve_fixed_point_d(&x, &plan, 8, FixedPointOptions::default()).unwrap();
        for d in &sol.d {
            assert_abs_diff_eq!(*d, 0.5, epsilon = 1e-8);
        }
        assert!(sol.residual <= 1e-10);
    }

    #[test]
    fn exact_leverage_closed_form_grid() {
        for p in [1usize, 2, 3, 5] {
            let x = varied(40, p);
            let plan = build_distribution(&x, PlanKind::ExactLeverage).unwrap();
            for m in [2 * p, 3 * p + 1, 10 * p] {
                let sol = solve_fixed_point_d(&x, &plan, m, FixedPointOptions::default()).unwrap();
                let expect = 1.0 - p as f64 / m as f64;
                for d in &sol.d {
                    assert_abs_diff_eq!(*d, expect, epsilon = 1e-8);
                }
            }
        }
    }

    #[test]
    fn zero_row_and_zero_probability_rows() {
        let x = DenseMatrix::from_row_slice(4, 1, &[1.0, 0.0, 2.0, 3.0]).unwrap();
        let plan = crate::sketching::SamplingPlan::custom(&x, vec![0.5, 0.25, 0.25, 0.0]).unwrap();
        let sol = solve_fixed_point_d(&x, &plan, 10, FixedPointOptions::default()).unwrap();
        assert_eq!(sol.d[1], 1.0);
        assert_eq!(sol.d[3], 0.0);
        assert!(sol.d.iter().all(|d| (0.0..=1.0).contains(d)));
    }

    #[test]
    fn uniform_plan_gives_nonconstant_d() {
        let x = varied(64, 3);
        let plan = build_distribution(&x, PlanKind::Uniform).unwrap();
        let sol = solve_fixed_point_d(&x, &plan, 32, FixedPointOptions::default()).unwrap();
        let (lo, hi) = sol
            .d
            .iter()
            .fold((f64::INFINITY, 0.0_f64), |(a, b), d| (a.min(*d), b.max(*d)));
        assert!(hi - lo > 1e-3);
        assert!(sol.d.iter().all(|d| *d > 0.0 && *d <= 1.0));
        assert_eq!(sol.nonmonotone_steps, 0);
        // damping converges to the same point
        let damped = solve_fixed_point_d(
            &x,
            &plan,
            32,
            FixedPointOptions {
                damping: 0.5,
                ..Default::default()
            },
        )
        .unwrap();
        for (a, b) in sol.d.iter().zip(&damped.d) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-8);
        }
    }

    #[test]
    fn iteration_budget_is_enforced() {
        let x = varied(64, 3);
        let plan = build_distribution(&x, PlanKind::Uniform).unwrap();
        let opts = FixedPointOptions {
            max_iters: 1,
            ..Default::default()
        };
        assert!(matches!(
            solve_fixed_point_d(&x, &plan, 32, opts),
            Err(Error::NoConvergence { iterations: 1, .. })
        ));
    }

    #[test]
    fn singular_intermediate_detected() {
        // rank-deficient design: the very first Gram is singular
        let x = DenseMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]).unwrap();
        let plan = build_distribution(&x, PlanKind::Uniform).unwrap();
        assert!(matches!(
            solve_fixed_point_d(&x, &plan, 4, FixedPointOptions::default()),
            Err(Error::SingularIntermediate { iteration: 1 })
        ));
    }

    #[test]
    fn gaussian_scale_examples() {
        assert_eq!(gaussian_inverse_scale(12, 10).unwrap(), 12.0);
        assert_eq!(gaussian_inverse_scale(2 * 6, 5).unwrap(), 2.0);
        assert!(gaussian_inverse_scale(6, 5).is_err());
    }
}
