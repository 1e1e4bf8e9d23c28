//! Monte-Carlo driver with deterministic per-trial streams.
//!
//! Trial `t` always draws from `ChaCha8Rng::seed_from_u64(base_seed)` on
//! stream `t`, and per-trial outputs are reduced in trial order, so results
//! are bit-identical for any thread count and the first `T` trials of a
//! longer run coincide with a run of length `T`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::sketcher::{Sketcher, SketchFamily};
use super::{psd_pinv, ResolvedZeta, TrialStats, ZetaPolicy};
use crate::error::{shape_err, Error, Result};
use crate::estimators::{cur_exact, ols_exact, CurSelection};
use crate::matcore::{factorize, DenseMatrix, ThinFactorization};

/// Bootstrap resamples used for bias standard errors.
pub const DEFAULT_BOOTSTRAP: usize = 200;

pub(crate) const BLOCK: usize = 4096;
const BOOTSTRAP_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// The RNG of trial `t`.
pub(crate) fn trial_rng(base_seed: u64, t: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(t);
    rng
}

/// Runs `f` on every trial, in parallel within fixed blocks, handing each
/// completed block to `sink` in trial order.
pub(crate) fn for_each_trial<T, F, S>(
    trials: usize,
    base_seed: u64,
    block: usize,
    f: F,
    mut sink: S,
) -> Result<()>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng) -> Result<T> + Sync,
    S: FnMut(T) -> Result<()>,
{
    let mut start = 0;
    while start < trials {
        let end = (start + block).min(trials);
        let out: Vec<Result<T>> = (start..end)
            .into_par_iter()
            .map(|t| f(&mut trial_rng(base_seed, t as u64)))
            .collect();
        for r in out {
            sink(r?)?;
        }
        start = end;
    }
    Ok(())
}

/// A randomized estimator evaluated once per trial, possibly in several
/// arms that share the same sketch draw.
pub trait TrialExperiment: Sync {
    fn arm_names(&self) -> Vec<String>;
    fn estimate_shape(&self) -> (usize, usize);
    /// Loss of the exact solution.
    fn normalizer(&self) -> f64;
    /// `L(estimate) - normalizer`.
    fn excess_loss(&self, estimate: &DMatrix<f64>) -> f64;
    /// One estimate per arm, or `None` if the trial is rejected.
    fn run_trial(&self, rng: &mut ChaCha8Rng) -> Result<Option<Vec<DMatrix<f64>>>>;
}

/// Difference between the second and first arm of a paired run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairedDiff {
    /// `bias(arm 1) - bias(arm 0)`.
    pub bias_diff: f64,
    /// Joint-bootstrap standard error of `bias_diff`.
    pub bias_diff_stderr: f64,
    pub variance_diff: f64,
    pub variance_diff_stderr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct McReport {
    pub arms: Vec<TrialStats>,
    /// Present when the experiment has exactly two arms.
    pub paired: Option<PairedDiff>,
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs `trials` trials and summarizes every arm. Bias standard errors come
/// from `bootstrap` resamples of the accepted trials (NaN when zero).
pub fn monte_carlo_paired<E: TrialExperiment>(
    exp: &E,
    trials: usize,
    base_seed: u64,
    bootstrap: usize,
) -> Result<McReport> {
    if trials == 0 {
        return Err(Error::InvalidDimensions("trials must be >= 1".into()));
    }
    let names = exp.arm_names();
    let arms = names.len();
    let (rows, cols) = exp.estimate_shape();
    let q = rows * cols;
    let normalizer = exp.normalizer();
    let mut estimates: Vec<Vec<f64>> = vec![Vec::new(); arms];
    let mut excess: Vec<Vec<f64>> = vec![Vec::new(); arms];
    let mut accepted = 0usize;
    let mut rejected = 0usize;
    for_each_trial(
        trials,
        base_seed,
        BLOCK,
        |rng| {
            Ok(match exp.run_trial(rng)? {
                Some(est) => {
                    let losses: Vec<f64> = est.iter().map(|e| exp.excess_loss(e)).collect();
                    Some((est, losses))
                }
                None => None,
            })
        },
        |out| {
            match out {
                Some((est, losses)) => {
                    accepted += 1;
                    for (a, (e, l)) in est.iter().zip(losses).enumerate() {
                        debug_assert!(l >= -1e-9 * normalizer.max(1e-300) - 1e-12);
                        estimates[a].extend(e.iter());
                        excess[a].push(l);
                    }
                }
                None => rejected += 1,
            }
            Ok(())
        },
    )?;
    if accepted == 0 {
        return Err(Error::AllTrialsRejected { trials });
    }

    let t = accepted as f64;
    let mean_of = |buf: &[f64], idx: &mut dyn Iterator<Item = usize>| {
        let mut acc = vec![0.0; q];
        let mut count = 0usize;
        for i in idx {
            for (a, v) in acc.iter_mut().zip(&buf[i * q..(i + 1) * q]) {
                *a += v;
            }
            count += 1;
        }
        DMatrix::from_iterator(rows, cols, acc.into_iter().map(|a| a / count as f64))
    };

    let mut stats = Vec::with_capacity(arms);
    for a in 0..arms {
        let mean = mean_of(&estimates[a], &mut (0..accepted));
        let mut sq = vec![0.0; q];
        for i in 0..accepted {
            for (k, s) in sq.iter_mut().enumerate() {
                let d = estimates[a][i * q + k] - mean[k];
                *s += d * d;
            }
        }
        let stderr = DMatrix::from_iterator(
            rows,
            cols,
            sq.into_iter()
                .map(|s| (s / (t - 1.0).max(1.0)).sqrt() / t.sqrt()),
        );
        let (mean_excess, sd_excess) = mean_sd(&excess[a]);
        stats.push(TrialStats {
            arm: names[a].clone(),
            accepted,
            rejected,
            bias: exp.excess_loss(&mean),
            mean_estimate: mean,
            estimate_stderr: stderr,
            mean_loss: normalizer + mean_excess,
            variance: mean_excess,
            bias_stderr: f64::NAN,
            variance_stderr: sd_excess / t.sqrt(),
            normalizer,
        });
    }

    // Joint bootstrap: the same resampled trial indices for every arm.
    let boot: Vec<Vec<f64>> = (0..bootstrap)
        .into_par_iter()
        .map(|b| {
            let mut rng = trial_rng(base_seed ^ BOOTSTRAP_SALT, b as u64);
            let idx: Vec<usize> = (0..accepted).map(|_| rng.random_range(0..accepted)).collect();
            (0..arms)
                .map(|a| exp.excess_loss(&mean_of(&estimates[a], &mut idx.iter().copied())))
                .collect()
        })
        .collect();
    if bootstrap >= 2 {
        for (a, s) in stats.iter_mut().enumerate() {
            let v: Vec<f64> = boot.iter().map(|r| r[a]).collect();
            s.bias_stderr = mean_sd(&v).1;
        }
    }

    let paired = (arms == 2).then(|| {
        let bias_diff_stderr = if bootstrap >= 2 {
            let v: Vec<f64> = boot.iter().map(|r| r[1] - r[0]).collect();
            mean_sd(&v).1
        } else {
            f64::NAN
        };
        let d: Vec<f64> = excess[1].iter().zip(&excess[0]).map(|(b, a)| b - a).collect();
        let (vd, sd) = mean_sd(&d);
        PairedDiff {
            bias_diff: stats[1].bias - stats[0].bias,
            bias_diff_stderr,
            variance_diff: vd,
            variance_diff_stderr: sd / t.sqrt(),
        }
    });
    Ok(McReport {
        arms: stats,
        paired,
    })
}

/// Summary of the first arm with [`DEFAULT_BOOTSTRAP`] resamples.
pub fn monte_carlo_bias_variance<E: TrialExperiment>(
    exp: &E,
    trials: usize,
    base_seed: u64,
) -> Result<TrialStats> {
    let mut report = monte_carlo_paired(exp, trials, base_seed, DEFAULT_BOOTSTRAP)?;
    Ok(report.arms.swap_remove(0))
}

/// Classical or debiased estimator from the same sketch draw.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Arm {
    Classical,
    Debiased,
}

impl Arm {
    pub fn tag(&self) -> &'static str {
        match self {
            Arm::Classical => "classical",
            Arm::Debiased => "debiased",
        }
    }
}

/// `V diag(1/sigma)`, mapping `X` onto its orthonormal basis: `U = X * this`.
pub(crate) fn basis_map(f: &ThinFactorization) -> DMatrix<f64> {
    let mut m = f.right_factor.transpose();
    for (j, s) in f.singular_values.iter().enumerate() {
        m.column_mut(j).scale_mut(1.0 / s);
    }
    m
}

fn check_arms(arms: &[Arm]) -> Result<()> {
    if arms.is_empty() {
        return Err(Error::InvalidDimensions("at least one arm required".into()));
    }
    Ok(())
}

/// Sketched least squares, `beta = (S X)^dagger S y`, per trial.
pub struct OlsExperiment {
    x: DMatrix<f64>,
    xy: DMatrix<f64>,
    xtx: DMatrix<f64>,
    beta_ols: DMatrix<f64>,
    normalizer: f64,
    to_basis: DMatrix<f64>,
    sketcher: Sketcher,
    zeta: ResolvedZeta,
    arms: Vec<Arm>,
}

impl OlsExperiment {
    pub fn new(
        x: &DenseMatrix,
        y: &DenseMatrix,
        family: SketchFamily,
        m: usize,
        arms: &[Arm],
        zeta: ZetaPolicy,
    ) -> Result<Self> {
        check_arms(arms)?;
        let beta_ols = ols_exact(x, y)?.beta.into_inner();
        let f = factorize(x, None);
        let zeta = zeta.resolve(f.numeric_rank, family.theta_max(), m)?;
        let sketcher = Sketcher::new(family, m, x, arms.contains(&Arm::Debiased))?;
        let xm = x.as_matrix();
        let mut xy = DMatrix::zeros(x.rows(), x.cols() + y.cols());
        xy.columns_mut(0, x.cols()).copy_from(xm);
        xy.columns_mut(x.cols(), y.cols()).copy_from(y.as_matrix());
        let normalizer = (y.as_matrix() - xm * &beta_ols).norm_squared();
        Ok(OlsExperiment {
            x: xm.clone(),
            xtx: xm.transpose() * xm,
            xy,
            beta_ols,
            normalizer,
            to_basis: basis_map(&f),
            sketcher,
            zeta,
            arms: arms.to_vec(),
        })
    }

    pub fn beta_ols(&self) -> &DMatrix<f64> {
        &self.beta_ols
    }

    /// Embedding epsilon in force, if any.
    pub fn eps(&self) -> Option<f64> {
        self.zeta.eps()
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn sketch_size(&self) -> usize {
        self.sketcher.m()
    }

    pub fn family(&self) -> &SketchFamily {
        self.sketcher.family()
    }
}

impl TrialExperiment for OlsExperiment {
    fn arm_names(&self) -> Vec<String> {
        self.arms.iter().map(|a| a.tag().to_string()).collect()
    }

    fn estimate_shape(&self) -> (usize, usize) {
        self.beta_ols.shape()
    }

    fn normalizer(&self) -> f64 {
        self.normalizer
    }

    fn excess_loss(&self, estimate: &DMatrix<f64>) -> f64 {
        let d = estimate - &self.beta_ols;
        (d.transpose() * &self.xtx * &d).trace()
    }

    fn run_trial(&self, rng: &mut ChaCha8Rng) -> Result<Option<Vec<DMatrix<f64>>>> {
        let p = self.x.ncols();
        let k = self.xy.ncols() - p;
        let real = self.sketcher.draw(rng)?;
        let solve = |debiased: bool| -> Result<(DMatrix<f64>, DMatrix<f64>)> {
            let t = real.arm(debiased).sketch_rows(&self.xy)?;
            let g = t.transpose() * t;
            let gx = g.view((0, 0), (p, p)).into_owned();
            let beta = psd_pinv(&gx) * g.view((0, p), (p, k));
            Ok((beta, gx))
        };
        let (classical, gx) = solve(false)?;
        let gu = self.to_basis.transpose() * gx * &self.to_basis;
        if !self.zeta.accepts(&gu) {
            return Ok(None);
        }
        let mut out = Vec::with_capacity(self.arms.len());
        for arm in &self.arms {
            out.push(match arm {
                Arm::Classical => classical.clone(),
                Arm::Debiased => solve(true)?.0,
            });
        }
        Ok(Some(out))
    }
}

/// Fast CUR, `U = (S_C C)^dagger S_C X S_R^T (R S_R^T)^dagger`, per trial.
pub struct CurExperiment {
    cx: DMatrix<f64>,
    c_cols: usize,
    r_t: DMatrix<f64>,
    ctc: DMatrix<f64>,
    rrt: DMatrix<f64>,
    u_cur: DMatrix<f64>,
    normalizer: f64,
    c_to_basis: DMatrix<f64>,
    r_to_basis: DMatrix<f64>,
    sketch_c: Sketcher,
    sketch_r: Sketcher,
    zeta_c: ResolvedZeta,
    zeta_r: ResolvedZeta,
    arms: Vec<Arm>,
}

impl CurExperiment {
    /// `family_c` samples the `n` rows (plan over the rows of `C`),
    /// `family_r` the `p` columns (plan over the rows of `R^T`). The
    /// acceptance event is checked on both sides.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        x: &DenseMatrix,
        sel: &CurSelection,
        family_c: SketchFamily,
        family_r: SketchFamily,
        m_c: usize,
        m_r: usize,
        arms: &[Arm],
        zeta: ZetaPolicy,
    ) -> Result<Self> {
        check_arms(arms)?;
        let exact = cur_exact(x, sel)?;
        let c = sel.c.as_matrix();
        let r = sel.r.as_matrix();
        let r_t = DenseMatrix::wrap(r.transpose());
        if r_t.rows() != x.cols() {
            return Err(shape_err("CurExperiment", x.cols().to_string(), r_t.rows().to_string()));
        }
        let fc = factorize(c, None);
        let fr = factorize(&r_t, None);
        let debias = arms.contains(&Arm::Debiased);
        let zeta_c = zeta.resolve(fc.numeric_rank, family_c.theta_max(), m_c)?;
        let zeta_r = zeta.resolve(fr.numeric_rank, family_r.theta_max(), m_r)?;
        let sketch_c = Sketcher::new(family_c, m_c, &sel.c, debias)?;
        let sketch_r = Sketcher::new(family_r, m_r, &r_t, debias)?;
        let u_cur = exact.u.into_inner();
        let normalizer = (c * &u_cur * r - x.as_matrix()).norm_squared();
        let mut cx = DMatrix::zeros(x.rows(), c.ncols() + x.cols());
        cx.columns_mut(0, c.ncols()).copy_from(c);
        cx.columns_mut(c.ncols(), x.cols()).copy_from(x.as_matrix());
        Ok(CurExperiment {
            cx,
            c_cols: c.ncols(),
            ctc: c.transpose() * c,
            rrt: r * r.transpose(),
            r_t: r_t.into_inner(),
            u_cur,
            normalizer,
            c_to_basis: basis_map(&fc),
            r_to_basis: basis_map(&fr),
            sketch_c,
            sketch_r,
            zeta_c,
            zeta_r,
            arms: arms.to_vec(),
        })
    }

    pub fn u_cur(&self) -> &DMatrix<f64> {
        &self.u_cur
    }
}

impl TrialExperiment for CurExperiment {
    fn arm_names(&self) -> Vec<String> {
        self.arms.iter().map(|a| a.tag().to_string()).collect()
    }

    fn estimate_shape(&self) -> (usize, usize) {
        self.u_cur.shape()
    }

    fn normalizer(&self) -> f64 {
        self.normalizer
    }

    fn excess_loss(&self, estimate: &DMatrix<f64>) -> f64 {
        let d = estimate - &self.u_cur;
        (d.transpose() * &self.ctc * &d * &self.rrt).trace()
    }

    fn run_trial(&self, rng: &mut ChaCha8Rng) -> Result<Option<Vec<DMatrix<f64>>>> {
        let c = self.c_cols;
        let p = self.r_t.nrows();
        let r = self.r_t.ncols();
        let real_c = self.sketch_c.draw(rng)?;
        let real_r = self.sketch_r.draw(rng)?;
        let solve = |debiased: bool| -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
            let tc = real_c.arm(debiased).sketch_rows(&self.cx)?;
            let gc_full = tc.transpose() * tc;
            let gc = gc_full.view((0, 0), (c, c)).into_owned();
            // (S_C C)^dagger S_C X, c x p
            let left = psd_pinv(&gc) * gc_full.view((0, c), (c, p));
            let mut rm = DMatrix::zeros(p, r + c);
            rm.columns_mut(0, r).copy_from(&self.r_t);
            rm.columns_mut(r, c).copy_from(&left.transpose());
            let tr = real_r.arm(debiased).sketch_rows(&rm)?;
            let gr_full = tr.transpose() * tr;
            let gr = gr_full.view((0, 0), (r, r)).into_owned();
            let u = gr_full.view((0, r), (r, c)).transpose() * psd_pinv(&gr);
            Ok((u, gc, gr))
        };
        let (classical, gc, gr) = solve(false)?;
        let gcu = self.c_to_basis.transpose() * gc * &self.c_to_basis;
        let gru = self.r_to_basis.transpose() * gr * &self.r_to_basis;
        if !(self.zeta_c.accepts(&gcu) && self.zeta_r.accepts(&gru)) {
            return Ok(None);
        }
        let mut out = Vec::with_capacity(self.arms.len());
        for arm in &self.arms {
            out.push(match arm {
                Arm::Classical => classical.clone(),
                Arm::Debiased => solve(true)?.0,
            });
        }
        Ok(Some(out))
    }
}

/// Monte-Carlo mean of `(X~^T X~)^{-1}` over accepted sketches.
#[derive(Clone, Debug, PartialEq)]
pub struct InverseGramMean {
    pub mean: DMatrix<f64>,
    pub accepted: usize,
    pub rejected: usize,
}

/// Averages the (pseudo)inverse of the sketched Gram over `trials` draws,
/// skipping trials rejected by `zeta` (checked on the basis of `X`).
pub fn mc_inverse_gram_mean(
    x: &DenseMatrix,
    family: SketchFamily,
    m: usize,
    trials: usize,
    zeta: ZetaPolicy,
    base_seed: u64,
) -> Result<InverseGramMean> {
    if trials == 0 {
        return Err(Error::InvalidDimensions("trials must be >= 1".into()));
    }
    let f = factorize(x, None);
    let zeta = zeta.resolve(f.numeric_rank, family.theta_max(), m)?;
    let to_basis = basis_map(&f);
    let sketcher = Sketcher::new(family, m, x, false)?;
    let p = x.cols();
    let mut sum = DMatrix::zeros(p, p);
    let mut accepted = 0;
    let mut rejected = 0;
    for_each_trial(
        trials,
        base_seed,
        BLOCK,
        |rng| {
            let real = sketcher.draw(rng)?;
            let t = real.arm(false).sketch_rows(x.as_matrix())?;
            let g = t.transpose() * t;
            let gu = to_basis.transpose() * &g * &to_basis;
            Ok(zeta.accepts(&gu).then(|| psd_pinv(&g)))
        },
        |out| {
            match out {
                Some(inv) => {
                    sum += inv;
                    accepted += 1;
                }
                None => rejected += 1,
            }
            Ok(())
        },
    )?;
    if accepted == 0 {
        return Err(Error::AllTrialsRejected { trials });
    }
    Ok(InverseGramMean {
        mean: sum / accepted as f64,
        accepted,
        rejected,
    })
}
