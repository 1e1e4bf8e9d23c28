//! A hard instance for row-sampled least squares: no scalar rescaling of the
//! sketched solution removes its bias.
//!
//! Column `j` of `X` has `1/2` and `sqrt(3)/2` in rows `2j` and `2j + 1`
//! (0-based), so `X^T X = I` and leverage scores are `1/4` and `3/4`.
//! Sampling uniformly over the first `2p` rows is a 1/2-approximation of
//! leverage sampling, yet the expected solution is shifted coordinate-wise
//! in opposite directions.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::matcore::DenseMatrix;
use crate::metrics::{monte_carlo_bias_variance, Arm, OlsExperiment, SketchFamily, TrialStats, ZetaPolicy};
use crate::sketching::SamplingPlan;

#[derive(Clone, Debug)]
pub struct LowerBoundInstance {
    pub x: DenseMatrix,
    pub y: DenseMatrix,
    /// Uniform over the first `2p` rows, zero elsewhere.
    pub plan: SamplingPlan,
    pub beta_star: DenseMatrix,
}

impl LowerBoundInstance {
    pub fn p(&self) -> usize {
        self.x.cols()
    }
}

/// The instance with `p = 4k` columns and `n >= 2p` rows.
pub fn lower_bound_instance(k: usize, n: usize) -> Result<LowerBoundInstance> {
    let p = 4 * k;
    if k == 0 || n < 2 * p {
        return Err(Error::InvalidDimensions(format!(
            "need k >= 1 and n >= 8k (k = {k}, n = {n})"
        )));
    }
    let h = 3f64.sqrt() / 2.0;
    let mut x = DMatrix::zeros(n, p);
    for j in 0..p {
        x[(2 * j, j)] = 0.5;
        x[(2 * j + 1, j)] = h;
    }
    // 1-based: -1 at odd i <= p, +1 at even i <= p, +1 for p < i <= 2p.
    let y = DMatrix::from_fn(n, 1, |i, _| {
        if i < p {
            if i % 2 == 0 {
                -1.0
            } else {
                1.0
            }
        } else if i < 2 * p {
            1.0
        } else {
            0.0
        }
    });
    let beta_star = DMatrix::from_fn(p, 1, |i, _| if i < p / 2 { h - 0.5 } else { h + 0.5 });
    let probs = (0..n)
        .map(|i| if i < 2 * p { 1.0 / (2 * p) as f64 } else { 0.0 })
        .collect();
    let x = DenseMatrix::new(x)?;
    let plan = SamplingPlan::custom(&x, probs)?;
    Ok(LowerBoundInstance {
        x,
        y: DenseMatrix::new(y)?,
        plan,
        beta_star: DenseMatrix::new(beta_star)?,
    })
}

/// `0, 0.01, ..., 2`.
pub fn default_gamma_grid() -> Vec<f64> {
    (0..=200).map(|i| i as f64 / 100.0).collect()
}

/// Best achievable bias of `gamma * E[beta~]` over scalar rescalings.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarFloor {
    /// `min_gamma L(gamma b) - L(beta_OLS)` over the grid.
    pub min_bias: f64,
    pub argmin_gamma: f64,
    /// Exact minimizer `(X b)^T (X beta_OLS) / ||X b||^2`.
    pub closed_form_gamma: f64,
    pub closed_form_bias: f64,
    /// `min_bias * m^2 / (p^2 ||r||^2)`.
    pub normalized: f64,
}

/// Minimizes `||X (gamma b - beta_OLS)||^2` over `grid` for a given mean
/// estimate `b`; `residual_sq = ||y - X beta_OLS||^2`.
pub fn scalar_floor_from_mean(
    x: &DMatrix<f64>,
    beta_ols: &DMatrix<f64>,
    mean: &DMatrix<f64>,
    grid: &[f64],
    m: usize,
    residual_sq: f64,
) -> Result<ScalarFloor> {
    if grid.is_empty() {
        return Err(Error::InvalidDimensions("empty gamma grid".into()));
    }
    let xb = x * mean;
    let xo = x * beta_ols;
    let bias_at = |g: f64| (&xb * g - &xo).norm_squared();
    let (argmin_gamma, min_bias) = grid
        .iter()
        .map(|&g| (g, bias_at(g)))
        .fold((f64::NAN, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best });
    let nb = xb.norm_squared();
    let closed_form_gamma = if nb > 0.0 { xb.dot(&xo) / nb } else { 0.0 };
    let p = x.ncols() as f64;
    Ok(ScalarFloor {
        min_bias,
        argmin_gamma,
        closed_form_gamma,
        closed_form_bias: bias_at(closed_form_gamma),
        normalized: min_bias * (m * m) as f64 / (p * p * residual_sq),
    })
}

/// Runs the classical sketched OLS Monte Carlo on the instance and returns
/// the scalar floor of its mean estimate alongside the raw statistics.
pub fn scalar_debias_floor(
    inst: &LowerBoundInstance,
    m: usize,
    grid: &[f64],
    trials: usize,
    zeta: ZetaPolicy,
    base_seed: u64,
) -> Result<(ScalarFloor, TrialStats)> {
    let exp = OlsExperiment::new(
        &inst.x,
        &inst.y,
        SketchFamily::RowSampling(inst.plan.clone()),
        m,
        &[Arm::Classical],
        zeta,
    )?;
    let stats = monte_carlo_bias_variance(&exp, trials, base_seed)?;
    let floor = scalar_floor_from_mean(
        inst.x.as_matrix(),
        exp.beta_ols(),
        &stats.mean_estimate,
        grid,
        m,
        stats.normalizer,
    )?;
    Ok((floor, stats))
}
