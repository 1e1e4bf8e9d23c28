//! Exact expectations by enumerating every ordered index tuple.
//!
//! For tiny instances, `E[beta]` and `E[P~]` under i.i.d. row sampling are
//! finite sums over the `s^m` ordered tuples of the support (size `s`),
//! each weighted by the product of its probabilities. No acceptance event
//! is applied unless asked for.

use nalgebra::DMatrix;

use crate::error::{shape_err, Error, Result};
use crate::estimators::ols_exact;
use crate::matcore::{factorize, DenseMatrix};
use crate::metrics::{basis_map, psd_pinv, ResolvedZeta, ZetaPolicy};
use crate::sketching::{merge_squared, SamplingPlan, DEFAULT_DEBIAS_FLOOR};

/// Maximum number of tuples an enumeration may visit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EnumerationBudget {
    pub max_tuples: u64,
}

impl Default for EnumerationBudget {
    fn default() -> Self {
        EnumerationBudget {
            max_tuples: 1_000_000,
        }
    }
}

/// Exact moments of sketched least squares.
#[derive(Clone, Debug, PartialEq)]
pub struct BetaExpectation {
    pub e_beta: DMatrix<f64>,
    /// `L(E[beta]) - L(beta_OLS)`.
    pub exact_bias: f64,
    /// `E[L(beta)] - L(beta_OLS)`.
    pub exact_variance: f64,
    pub tuples: u64,
    /// Probability mass of the accepted tuples; one up to rounding when
    /// nothing is conditioned on.
    pub weight_total: f64,
}

/// Exact moments of the sketched oblique projection.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionExpectation {
    pub e_p: DMatrix<f64>,
    /// `||E[P~] - P||_F^2`.
    pub bias_f2: f64,
    /// `E ||P~ - P||_F^2`.
    pub second_moment: f64,
    pub tuples: u64,
    pub weight_total: f64,
}

/// Support, per-row squared weight factors, and tuple count.
struct Tuples {
    support: Vec<usize>,
    /// `1/(m pi_i)` times the squared debias factor when requested.
    w2: Vec<f64>,
    probs: Vec<f64>,
    m: usize,
    count: u64,
}

impl Tuples {
    fn new(plan: &SamplingPlan, m: usize, debiased: bool, budget: EnumerationBudget) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidDimensions("sketch size m must be >= 1".into()));
        }
        let support: Vec<usize> = (0..plan.len())
            .filter(|&i| plan.probabilities()[i] > 0.0)
            .collect();
        let needed = (support.len() as u128)
            .checked_pow(m as u32)
            .unwrap_or(u128::MAX);
        if needed > budget.max_tuples as u128 {
            return Err(Error::BudgetExceeded {
                needed,
                budget: budget.max_tuples,
            });
        }
        let factors = if debiased {
            Some(plan.debias_factors(m, DEFAULT_DEBIAS_FLOOR)?)
        } else {
            None
        };
        let pi = plan.probabilities();
        let w2 = support
            .iter()
            .map(|&i| {
                let base = 1.0 / (m as f64 * pi[i]);
                match &factors {
                    Some(f) => base * f[i].map_or(1.0, |d| d * d),
                    None => base,
                }
            })
            .collect();
        let probs = support.iter().map(|&i| pi[i]).collect();
        Ok(Tuples {
            support,
            w2,
            probs,
            m,
            count: needed as u64,
        })
    }

    /// Decodes tuple `t` into `diag(S^T S)` and its probability.
    fn tuple(&self, mut t: u64) -> (Vec<(usize, f64)>, f64) {
        let s = self.support.len() as u64;
        let mut idx = Vec::with_capacity(self.m);
        let mut w = Vec::with_capacity(self.m);
        let mut prob = 1.0;
        for _ in 0..self.m {
            let d = (t % s) as usize;
            t /= s;
            idx.push(self.support[d]);
            w.push(self.w2[d].sqrt());
            prob *= self.probs[d];
        }
        (merge_squared(&idx, &w), prob)
    }
}

/// Pairwise (tree) sum of `f(t)` over `lo..hi`; the tree shape depends only
/// on the range, so the result is deterministic.
fn pairwise_sum<F>(lo: u64, hi: u64, f: &F) -> Vec<f64>
where
    F: Fn(u64) -> Vec<f64> + Sync,
{
    const LEAF: u64 = 64;
    if hi - lo <= LEAF {
        let mut acc = f(lo);
        for t in lo + 1..hi {
            for (a, v) in acc.iter_mut().zip(f(t)) {
                *a += v;
            }
        }
        return acc;
    }
    let mid = lo + (hi - lo) / 2;
    let (mut a, b) = rayon::join(|| pairwise_sum(lo, mid, f), || pairwise_sum(mid, hi, f));
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
    a
}

fn gram_and_cross(x: &DMatrix<f64>, y: &DMatrix<f64>, diag: &[(usize, f64)]) -> (DMatrix<f64>, DMatrix<f64>) {
    let p = x.ncols();
    let mut g = DMatrix::zeros(p, p);
    let mut h = DMatrix::zeros(p, y.ncols());
    for &(i, w2) in diag {
        let xi = x.row(i);
        g += xi.transpose() * xi * w2;
        h += xi.transpose() * y.row(i) * w2;
    }
    (g, h)
}

/// Exact `E[beta]` of classical (or debiased) sketched OLS.
pub fn enumerate_expectation_beta(
    x: &DenseMatrix,
    y: &DenseMatrix,
    plan: &SamplingPlan,
    m: usize,
    debiased: bool,
    budget: EnumerationBudget,
) -> Result<BetaExpectation> {
    enumerate_conditional_beta(x, y, plan, m, debiased, ZetaPolicy::Disabled, budget)
}

/// Exact `E[beta | zeta]`: tuples rejected by `zeta` (checked on the
/// classical sketch, as in the Monte-Carlo harness) are dropped and the rest
/// renormalized. `weight_total` is then the acceptance probability.
pub fn enumerate_conditional_beta(
    x: &DenseMatrix,
    y: &DenseMatrix,
    plan: &SamplingPlan,
    m: usize,
    debiased: bool,
    zeta: ZetaPolicy,
    budget: EnumerationBudget,
) -> Result<BetaExpectation> {
    if plan.len() != x.rows() {
        return Err(shape_err(
            "enumerate_expectation_beta",
            format!("plan over {} rows", x.rows()),
            format!("plan over {} rows", plan.len()),
        ));
    }
    let beta_ols = ols_exact(x, y)?.beta.into_inner();
    let tuples = Tuples::new(plan, m, debiased, budget)?;
    let classical = if debiased && zeta != ZetaPolicy::Disabled {
        Some(Tuples::new(plan, m, false, budget)?)
    } else {
        None
    };
    let xm = x.as_matrix();
    let ym = y.as_matrix();
    let f = factorize(x, None);
    let zeta = zeta.resolve(f.numeric_rank, plan.theta_max(), m)?;
    let to_basis = basis_map(&f);
    let xtx = xm.transpose() * xm;
    let excess = |b: &DMatrix<f64>| {
        let d = b - &beta_ols;
        (d.transpose() * &xtx * &d).trace()
    };
    let q = beta_ols.len();
    let sum = pairwise_sum(0, tuples.count, &|t| {
        let (diag, prob) = tuples.tuple(t);
        let (g, h) = gram_and_cross(xm, ym, &diag);
        if zeta != ResolvedZeta::Accept {
            let gc = match &classical {
                Some(c) => gram_and_cross(xm, ym, &c.tuple(t).0).0,
                None => g.clone(),
            };
            if !zeta.accepts(&(to_basis.transpose() * gc * &to_basis)) {
                return vec![0.0; q + 2];
            }
        }
        let beta = psd_pinv(&g) * h;
        let mut out = Vec::with_capacity(q + 2);
        out.push(prob);
        out.extend(beta.iter().map(|b| prob * b));
        out.push(prob * excess(&beta));
        out
    });
    let mass = sum[0];
    if mass <= 0.0 {
        return Err(Error::AllTrialsRejected {
            trials: tuples.count as usize,
        });
    }
    let e_beta = DMatrix::from_iterator(
        beta_ols.nrows(),
        beta_ols.ncols(),
        sum[1..=q].iter().map(|v| v / mass),
    );
    Ok(BetaExpectation {
        exact_bias: excess(&e_beta),
        exact_variance: sum[q + 1] / mass,
        e_beta,
        tuples: tuples.count,
        weight_total: mass,
    })
}

/// Exact `E[P~]` and `E||P~ - P||_F^2` for `P~ = X (S X)^dagger S`.
pub fn enumerate_expectation_projection(
    x: &DenseMatrix,
    plan: &SamplingPlan,
    m: usize,
    debiased: bool,
    budget: EnumerationBudget,
) -> Result<ProjectionExpectation> {
    if plan.len() != x.rows() {
        return Err(shape_err(
            "enumerate_expectation_projection",
            format!("plan over {} rows", x.rows()),
            format!("plan over {} rows", plan.len()),
        ));
    }
    let tuples = Tuples::new(plan, m, debiased, budget)?;
    let n = x.rows();
    let xm = x.as_matrix();
    let basis = factorize(xm, None).basis;
    let p_orth = &basis * basis.transpose();
    let sum = pairwise_sum(0, tuples.count, &|t| {
        let (diag, prob) = tuples.tuple(t);
        let (g, _) = gram_and_cross(xm, &DMatrix::zeros(n, 0), &diag);
        let left = xm * psd_pinv(&g); // n x p
        let mut pt = DMatrix::zeros(n, n);
        for &(i, w2) in &diag {
            let col = &left * xm.row(i).transpose() * w2;
            pt.set_column(i, &col);
        }
        let dist = (&pt - &p_orth).norm_squared();
        let mut out = Vec::with_capacity(n * n + 2);
        out.push(prob);
        out.extend(pt.iter().map(|v| prob * v));
        out.push(prob * dist);
        out
    });
    let e_p = DMatrix::from_column_slice(n, n, &sum[1..=n * n]);
    Ok(ProjectionExpectation {
        bias_f2: (&e_p - &p_orth).norm_squared(),
        second_moment: sum[n * n + 1],
        e_p,
        tuples: tuples.count,
        weight_total: sum[0],
    })
}
