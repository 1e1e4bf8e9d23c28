//! Bias and variance measurement.
//!
//! Monte-Carlo estimates of `Bias = L(E[beta]) - L(beta_OLS)` and
//! `Var = E[L(beta)] - L(beta_OLS)` (and their CUR analogues) conditioned on
//! a per-trial acceptance event, closed-form predictions of the variance,
//! and moments of sketched oblique projections.

mod montecarlo;
mod projection;
mod sketcher;

pub use montecarlo::{
    mc_inverse_gram_mean, monte_carlo_bias_variance, monte_carlo_paired, Arm, CurExperiment,
    InverseGramMean, McReport, OlsExperiment, PairedDiff, TrialExperiment, DEFAULT_BOOTSTRAP,
};
pub(crate) use montecarlo::basis_map;
pub use projection::{projection_moments, ProjectionMoments};
pub use sketcher::SketchFamily;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{shape_err, Error, Result};
use crate::estimators::{ols_exact, CurSelection};
use crate::matcore::{check_cur_shapes, factorize, DenseMatrix};
use crate::sketching::SamplingPlan;

/// Failure probability used for the automatic conditioning epsilon.
pub const DEFAULT_DELTA: f64 = 0.01;

/// `sqrt(3 p theta_max log(2p/delta) / m)`.
pub fn conditioning_eps(p: usize, theta_max: f64, m: usize, delta: f64) -> f64 {
    (3.0 * p as f64 * theta_max * (2.0 * p as f64 / delta).ln() / m as f64).sqrt()
}

/// Per-trial acceptance event.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ZetaPolicy {
    /// Accept every trial.
    Disabled,
    /// Accept iff `(S U)^T (S U)` has spectrum in `[1/(1+eps), 1+eps]` for an
    /// orthonormal basis `U` of the relevant matrix. `None` picks `eps` by
    /// [`conditioning_eps`] with [`DEFAULT_DELTA`].
    Embedding { eps: Option<f64> },
    /// Accept iff the sketch preserves the rank of the relevant matrix.
    FullRank,
}

impl ZetaPolicy {
    pub fn auto() -> Self {
        ZetaPolicy::Embedding { eps: None }
    }

    pub fn tag(&self) -> String {
        match self {
            ZetaPolicy::Disabled => "off".into(),
            ZetaPolicy::Embedding { eps: None } => "embedding(auto)".into(),
            ZetaPolicy::Embedding { eps: Some(e) } => format!("embedding({e})"),
            ZetaPolicy::FullRank => "full_rank".into(),
        }
    }

    pub(crate) fn resolve(&self, rank: usize, theta_max: f64, m: usize) -> Result<ResolvedZeta> {
        Ok(match *self {
            ZetaPolicy::Disabled => ResolvedZeta::Accept,
            ZetaPolicy::FullRank => ResolvedZeta::FullRank,
            ZetaPolicy::Embedding { eps: Some(e) } => {
                if !(e > 0.0 && e.is_finite()) {
                    return Err(Error::InvalidDimensions(format!(
                        "embedding eps must be positive, got {e}"
                    )));
                }
                ResolvedZeta::Embedding(e)
            }
            ZetaPolicy::Embedding { eps: None } => {
                ResolvedZeta::Embedding(conditioning_eps(rank, theta_max, m, DEFAULT_DELTA))
            }
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum ResolvedZeta {
    Accept,
    Embedding(f64),
    FullRank,
}

impl ResolvedZeta {
    /// Decides a trial from the sketched Gram of an orthonormal basis.
    pub(crate) fn accepts(&self, basis_gram: &DMatrix<f64>) -> bool {
        match self {
            ResolvedZeta::Accept => true,
            ResolvedZeta::Embedding(eps) => crate::sketching::gram_within(basis_gram, *eps),
            ResolvedZeta::FullRank => {
                let ev = basis_gram.clone().symmetric_eigenvalues();
                ev.iter().all(|&l| l > FULL_RANK_TOL)
            }
        }
    }

    pub(crate) fn eps(&self) -> Option<f64> {
        match self {
            ResolvedZeta::Embedding(e) => Some(*e),
            _ => None,
        }
    }
}

/// Smallest eigenvalue of `(S U)^T (S U)` still counted as full rank.
const FULL_RANK_TOL: f64 = 1e-10;

/// Pseudoinverse of a symmetric positive semidefinite matrix. Eigenvalues
/// below `1e-12` times the largest are treated as zero.
pub(crate) fn psd_pinv(g: &DMatrix<f64>) -> DMatrix<f64> {
    let k = g.nrows();
    let eig = SymmetricEigen::new(g.clone());
    let top = eig.eigenvalues.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let tol = 1e-12 * top;
    let mut out = DMatrix::zeros(k, k);
    for (j, &l) in eig.eigenvalues.iter().enumerate() {
        if l > tol && l > 0.0 {
            let v = eig.eigenvectors.column(j);
            out += (v * v.transpose()) / l;
        }
    }
    out
}

/// Monte-Carlo summary for one estimator.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialStats {
    pub arm: String,
    pub accepted: usize,
    pub rejected: usize,
    /// Mean estimate over accepted trials.
    pub mean_estimate: DMatrix<f64>,
    /// Per-entry standard error of `mean_estimate`.
    pub estimate_stderr: DMatrix<f64>,
    /// Mean loss over accepted trials.
    pub mean_loss: f64,
    /// `L(mean_estimate) - normalizer`.
    pub bias: f64,
    /// `mean_loss - normalizer`.
    pub variance: f64,
    pub bias_stderr: f64,
    pub variance_stderr: f64,
    /// Loss of the exact solution.
    pub normalizer: f64,
}

impl TrialStats {
    pub fn total_trials(&self) -> usize {
        self.accepted + self.rejected
    }

    pub fn relative_bias(&self) -> f64 {
        self.bias / self.normalizer
    }

    pub fn relative_variance(&self) -> f64 {
        self.variance / self.normalizer
    }
}

/// `r = y - X beta_OLS`.
pub fn residual_vector(x: &DenseMatrix, y: &DenseMatrix) -> Result<DenseMatrix> {
    let beta = ols_exact(x, y)?.beta;
    Ok(DenseMatrix::wrap(y.as_matrix() - x.as_matrix() * beta.as_matrix()))
}

/// `l_i / (m pi_i)` per row with the zero-leverage convention.
fn leverage_ratios(plan: &SamplingPlan, m: usize) -> Result<Vec<f64>> {
    (0..plan.len())
        .map(|i| {
            let l = plan.leverage()[i];
            if l == 0.0 {
                Ok(0.0)
            } else if plan.probabilities()[i] == 0.0 {
                Err(Error::UndefinedTerm { row: i })
            } else {
                Ok(l / (m as f64 * plan.probabilities()[i]))
            }
        })
        .collect()
}

/// Predicted variance `sum_i r_i^2 l_i / (m pi_i)`.
pub fn delta_x(plan: &SamplingPlan, m: usize, r: &DenseMatrix) -> Result<f64> {
    if r.rows() != plan.len() || r.cols() != 1 {
        return Err(shape_err(
            "delta_x",
            format!("{}x1 residual", plan.len()),
            format!("{}x{}", r.rows(), r.cols()),
        ));
    }
    let ratios = leverage_ratios(plan, m)?;
    Ok(ratios.iter().zip(r.iter()).map(|(q, ri)| q * ri * ri).sum())
}

/// `tr(P_perp diag{l_i/(m pi_i)}) = sum_i (1 - l_i) l_i / (m pi_i)`.
pub fn predicted_projection_trace(plan: &SamplingPlan, m: usize) -> Result<f64> {
    let ratios = leverage_ratios(plan, m)?;
    Ok(ratios
        .iter()
        .zip(plan.leverage())
        .map(|(q, l)| q * (1.0 - l))
        .sum())
}

/// The two one-sided CUR variance terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeltaCur {
    pub delta_1: f64,
    pub delta_2: f64,
}

impl DeltaCur {
    /// `(d1 + d2)^2 + sqrt(eps_l) (d1 + d2)` for a caller-supplied `eps * L`.
    pub fn total(&self, eps_l: f64) -> f64 {
        let s = self.delta_1 + self.delta_2;
        s * s + eps_l.sqrt() * s
    }
}

fn complement_residual(a: &DMatrix<f64>, target: &DMatrix<f64>) -> DMatrix<f64> {
    let w = factorize(a, None).basis;
    target - &w * (w.transpose() * target)
}

fn check_cur_plans(
    x: &DenseMatrix,
    sel: &CurSelection,
    plan_c: &SamplingPlan,
    plan_r: &SamplingPlan,
) -> Result<()> {
    check_cur_shapes(x, &sel.c, &sel.r)?;
    if plan_c.len() != x.rows() || plan_r.len() != x.cols() {
        return Err(shape_err(
            "delta_cur plans",
            format!("{} and {} rows", x.rows(), x.cols()),
            format!("{} and {} rows", plan_c.len(), plan_r.len()),
        ));
    }
    Ok(())
}

/// One-sided CUR terms from their definition:
/// `||diag(sqrt(l_i(C)/(m_c pi_i))) (I - W W^T) X||_F` and the same for `R^T`.
/// `plan_c` is over the rows of `C`, `plan_r` over the rows of `R^T`.
pub fn delta_cur(
    x: &DenseMatrix,
    sel: &CurSelection,
    plan_c: &SamplingPlan,
    plan_r: &SamplingPlan,
    m_c: usize,
    m_r: usize,
) -> Result<DeltaCur> {
    check_cur_plans(x, sel, plan_c, plan_r)?;
    let side = |a: &DMatrix<f64>, target: &DMatrix<f64>, plan: &SamplingPlan, m: usize| {
        let ratios = leverage_ratios(plan, m)?;
        let mut b = complement_residual(a, target);
        for (i, q) in ratios.iter().enumerate() {
            b.row_mut(i).scale_mut(q.sqrt());
        }
        Ok::<f64, Error>(b.norm())
    };
    let xt = x.transpose().into_inner();
    Ok(DeltaCur {
        delta_1: side(&sel.c, x, plan_c, m_c)?,
        delta_2: side(&sel.r.transpose(), &xt, plan_r, m_r)?,
    })
}

/// Same quantity as [`delta_cur`], evaluated through the expanded sum
/// `sum_i q_i [(I - W W^T) X X^T (I - W W^T)]_ii`.
pub fn delta_cur_expanded(
    x: &DenseMatrix,
    sel: &CurSelection,
    plan_c: &SamplingPlan,
    plan_r: &SamplingPlan,
    m_c: usize,
    m_r: usize,
) -> Result<DeltaCur> {
    check_cur_plans(x, sel, plan_c, plan_r)?;
    let side = |a: &DMatrix<f64>, target: &DMatrix<f64>, plan: &SamplingPlan, m: usize| {
        let ratios = leverage_ratios(plan, m)?;
        let n = target.nrows();
        let w = factorize(a, None).basis;
        let comp = DMatrix::identity(n, n) - &w * w.transpose();
        let outer = target * target.transpose();
        let sandwich = &comp * outer * &comp;
        let total: f64 = ratios.iter().enumerate().map(|(i, q)| q * sandwich[(i, i)]).sum();
        Ok::<f64, Error>(total.max(0.0).sqrt())
    };
    let xt = x.transpose().into_inner();
    Ok(DeltaCur {
        delta_1: side(&sel.c, x, plan_c, m_c)?,
        delta_2: side(&sel.r.transpose(), &xt, plan_r, m_r)?,
    })
}
