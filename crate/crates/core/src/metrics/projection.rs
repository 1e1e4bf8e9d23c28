//! First and second moments of sketched oblique projections.
//!
//! With `X = U R` (`U` an orthonormal basis), `P~ = X (S X)^dagger S =
//! U B` where `B = R G^dagger X^T S^T S` is `k x n` and `G = X^T S^T S X`.
//! Since `P = U U^T`, `||P~ - P||_F = ||B - U^T||_F`, so all moments are
//! accumulated in `k x n` coordinates instead of `n x n`.

use nalgebra::DMatrix;

use super::montecarlo::for_each_trial;
use super::sketcher::{ArmSketch, Sketcher, SketchFamily};
use super::{predicted_projection_trace, psd_pinv, ZetaPolicy};
use crate::error::{Error, Result};
use crate::matcore::{factorize, DenseMatrix};

const PROJECTION_BLOCK: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionMoments {
    pub accepted: usize,
    pub rejected: usize,
    /// `||mean(P~) - P||_F^2`.
    pub bias_f2: f64,
    /// `(T bias_f2 - second_moment) / (T - 1)`: removes the `tr(Cov)/T`
    /// contribution of Monte-Carlo noise from `bias_f2` (unbiased, may be
    /// negative).
    pub bias_f2_corrected: f64,
    /// `mean ||P~ - P||_F^2`.
    pub second_moment: f64,
    pub second_moment_stderr: f64,
    /// `tr(P_perp diag{l_i/(m pi_i)})`; only defined for row sampling.
    pub predicted_trace: Option<f64>,
    /// `||P_perp||_F^2 = n - rank`.
    pub perp_f2: f64,
}

/// Sparse or dense `B` for one trial.
enum TrialB {
    Columns(Vec<(usize, Vec<f64>)>),
    Dense(DMatrix<f64>),
}

/// Moments of `X (S X)^dagger S` over `trials` draws. `debiased` selects the
/// debiased sketch; the acceptance event always uses the classical one.
pub fn projection_moments(
    x: &DenseMatrix,
    family: SketchFamily,
    m: usize,
    debiased: bool,
    trials: usize,
    zeta: ZetaPolicy,
    base_seed: u64,
) -> Result<ProjectionMoments> {
    if trials == 0 {
        return Err(Error::InvalidDimensions("trials must be >= 1".into()));
    }
    let n = x.rows();
    let f = factorize(x, None);
    let k = f.numeric_rank;
    let u = &f.basis;
    let zeta = zeta.resolve(k, family.theta_max(), m)?;
    let predicted_trace = match &family {
        SketchFamily::RowSampling(plan) => Some(predicted_projection_trace(plan, m)?),
        _ => None,
    };
    // R = diag(sigma) V^T and its map back: U = X * to_basis.
    let mut r_factor = f.right_factor.clone();
    for (i, s) in f.singular_values.iter().enumerate() {
        r_factor.row_mut(i).scale_mut(*s);
    }
    let mut to_basis = f.right_factor.transpose();
    for (j, s) in f.singular_values.iter().enumerate() {
        to_basis.column_mut(j).scale_mut(1.0 / s);
    }
    let sketcher = Sketcher::new(family, m, x, debiased)?;
    let xm = x.as_matrix();

    let trial = |rng: &mut rand_chacha::ChaCha8Rng| -> Result<Option<(TrialB, f64)>> {
        let real = sketcher.draw(rng)?;
        let gram = |arm: ArmSketch| -> Result<DMatrix<f64>> {
            let t = arm.sketch_rows(xm)?;
            Ok(t.transpose() * t)
        };
        let g_classical = gram(real.arm(false))?;
        let gu = to_basis.transpose() * &g_classical * &to_basis;
        if !zeta.accepts(&gu) {
            return Ok(None);
        }
        let arm = real.arm(debiased);
        let g = if debiased { gram(arm)? } else { g_classical };
        let h = &r_factor * psd_pinv(&g); // k x p
        let b = match arm {
            ArmSketch::Rows(diag) => {
                let cols: Vec<(usize, Vec<f64>)> = diag
                    .iter()
                    .map(|&(i, w2)| {
                        let col = (&h * xm.row(i).transpose()) * w2;
                        (i, col.iter().copied().collect())
                    })
                    .collect();
                TrialB::Columns(cols)
            }
            ArmSketch::Dense(op) => {
                let sx = op.apply(xm)?;
                TrialB::Dense(op.apply_transpose(&(sx * h.transpose()))?.transpose())
            }
        };
        // ||B - U^T||^2 = ||B||^2 - 2 tr(B U) + k
        let (norm2, cross) = match &b {
            TrialB::Columns(cols) => cols.iter().fold((0.0, 0.0), |(nn, cr), (i, c)| {
                let dot: f64 = c.iter().zip(u.row(*i).iter()).map(|(a, b)| a * b).sum();
                (nn + c.iter().map(|v| v * v).sum::<f64>(), cr + dot)
            }),
            TrialB::Dense(bd) => (bd.norm_squared(), (bd * u).trace()),
        };
        Ok(Some((b, norm2 - 2.0 * cross + k as f64)))
    };

    let mut sum_b = DMatrix::<f64>::zeros(k, n);
    let mut sq = Vec::new();
    let mut rejected = 0usize;
    for_each_trial(trials, base_seed, PROJECTION_BLOCK, trial, |out| {
        match out {
            Some((b, dist2)) => {
                match b {
                    TrialB::Columns(cols) => {
                        for (i, c) in cols {
                            for (r, v) in c.into_iter().enumerate() {
                                sum_b[(r, i)] += v;
                            }
                        }
                    }
                    TrialB::Dense(bd) => sum_b += bd,
                }
                sq.push(dist2);
            }
            None => rejected += 1,
        }
        Ok(())
    })?;
    let accepted = sq.len();
    if accepted == 0 {
        return Err(Error::AllTrialsRejected { trials });
    }
    let t = accepted as f64;
    let mean_b = sum_b / t;
    let bias_f2 = (mean_b - u.transpose()).norm_squared();
    let second_moment = sq.iter().sum::<f64>() / t;
    let sd = if accepted > 1 {
        (sq.iter().map(|v| (v - second_moment).powi(2)).sum::<f64>() / (t - 1.0)).sqrt()
    } else {
        f64::NAN
    };
    let bias_f2_corrected = if accepted > 1 {
        (t * bias_f2 - second_moment) / (t - 1.0)
    } else {
        f64::NAN
    };
    Ok(ProjectionMoments {
        accepted,
        rejected,
        bias_f2,
        bias_f2_corrected,
        second_moment,
        second_moment_stderr: sd / t.sqrt(),
        predicted_trace,
        perp_f2: (n - k) as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::oblique_projection;
    use crate::matcore::orthogonal_projection;
    use crate::metrics::montecarlo::trial_rng;
    use crate::sketching::{build_distribution, PlanKind, SamplingPlan, SketchOperator};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, p: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseMatrix::new(DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng))).unwrap()
    }

    #[test]
    fn huge_sample_is_nearly_orthogonal() {
        // one trial with m >> n approaches the orthogonal projection
        let x = gaussian(12, 2, 1);
        let plan = SamplingPlan::custom(&x, vec![1.0 / 12.0; 12]).unwrap();
        let mom = projection_moments(
            &x,
            SketchFamily::RowSampling(plan),
            200_000,
            false,
            1,
            ZetaPolicy::Disabled,
            3,
        )
        .unwrap();
        assert!(mom.second_moment < 1e-3);
        assert_abs_diff_eq!(mom.bias_f2, mom.second_moment, epsilon = 1e-15);
        assert_eq!(mom.perp_f2, 10.0);
    }

    #[test]
    fn exact_leverage_trace_is_scaled_perp() {
        let x = gaussian(64, 3, 2);
        let plan = build_distribution(&x, PlanKind::ExactLeverage).unwrap();
        let mom = projection_moments(
            &x,
            SketchFamily::RowSampling(plan),
            16,
            false,
            10,
            ZetaPolicy::Disabled,
            1,
        )
        .unwrap();
        assert_abs_diff_eq!(mom.predicted_trace.unwrap(), 3.0 / 16.0 * 61.0, epsilon = 1e-10);
    }

    fn direct_distance(x: &DenseMatrix, op: &SketchOperator) -> f64 {
        let (p, _) = orthogonal_projection(x);
        let pt = oblique_projection(x, op).unwrap();
        (pt.as_matrix() - p.as_matrix()).norm_squared()
    }

    #[test]
    fn single_trial_matches_explicit_projection() {
        let x = gaussian(20, 3, 4);
        let plan = build_distribution(&x, PlanKind::RowNorm).unwrap();
        let mom = projection_moments(
            &x,
            SketchFamily::RowSampling(plan.clone()),
            9,
            false,
            1,
            ZetaPolicy::Disabled,
            5,
        )
        .unwrap();
        let s = plan.sampler().draw(&plan, 9, &mut trial_rng(5, 0));
        let op = SketchOperator::row_sampling(s, false, 20).unwrap();
        assert_abs_diff_eq!(mom.second_moment, direct_distance(&x, &op), epsilon = 1e-9);
    }

    #[test]
    fn dense_sketch_matches_explicit_projection() {
        let x = gaussian(13, 2, 6);
        let mom = projection_moments(&x, SketchFamily::Srht, 6, false, 1, ZetaPolicy::Disabled, 7)
            .unwrap();
        assert!(mom.predicted_trace.is_none());
        let op = crate::sketching::srht_operator(13, 6, &mut trial_rng(7, 0)).unwrap();
        assert_abs_diff_eq!(mom.second_moment, direct_distance(&x, &op), epsilon = 1e-9);
        assert_abs_diff_eq!(mom.bias_f2, mom.second_moment, epsilon = 1e-9);
    }
}
