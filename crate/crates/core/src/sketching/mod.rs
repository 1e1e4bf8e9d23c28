//! Sampling distributions and sketch operators.
//!
//! A [`SamplingPlan`] is an importance distribution over the rows of a
//! matrix together with the leverage scores it is compared against. Rows are
//! drawn with replacement into a [`RowSample`], optionally carrying the
//! per-row debias weights `1 / sqrt(1 - l_i / (m pi_i))`. Every sketch family
//! is wrapped in a [`SketchOperator`].

mod hadamard;
mod operator;

pub use hadamard::{fwht_inplace, next_power_of_two};
pub use operator::{
    apply_sketch, gaussian_operator, sparse_sign_operator, srht_operator, subspace_embedding_check,
    SketchOperator, SparseSignSketch, SrhtSketch,
};
pub(crate) use operator::gram_within;

use rand::Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution;

use crate::error::{Error, Result};
use crate::matcore::{factorize, leverage_from, DenseMatrix};

/// Default lower bound on `1 - l_i / (m pi_i)` before a debias weight is
/// declared undefined.
pub const DEFAULT_DEBIAS_FLOOR: f64 = 1e-8;

/// How the sampling probabilities were chosen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PlanKind {
    Uniform,
    RowNorm,
    ExactLeverage,
    /// `lambda * l_i / rank + (1 - lambda) / n`.
    Shrinkage(f64),
    Custom,
}

impl PlanKind {
    pub fn tag(&self) -> String {
        match self {
            PlanKind::Uniform => "uniform".into(),
            PlanKind::RowNorm => "rownorm".into(),
            PlanKind::ExactLeverage => "lev".into(),
            PlanKind::Shrinkage(l) => format!("shrinkage({l})"),
            PlanKind::Custom => "custom".into(),
        }
    }
}

/// A sampling distribution over rows plus the leverage scores and
/// importance factors derived from it.
#[derive(Clone, Debug)]
pub struct SamplingPlan {
    probabilities: Vec<f64>,
    leverage: Vec<f64>,
    rank: usize,
    theta_min: f64,
    theta_max: f64,
    kind: PlanKind,
}

impl SamplingPlan {
    /// Assembles a plan from precomputed leverage scores. Probabilities must
    /// be nonnegative and sum to one within `1e-12`; they are renormalized.
    pub fn from_parts(
        leverage: Vec<f64>,
        rank: usize,
        probabilities: Vec<f64>,
        kind: PlanKind,
    ) -> Result<Self> {
        if leverage.len() != probabilities.len() {
            return Err(Error::InvalidDistribution(format!(
                "{} probabilities for {} rows",
                probabilities.len(),
                leverage.len()
            )));
        }
        if let Some(i) = probabilities.iter().position(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidDistribution(format!(
                "probability {i} is {}",
                probabilities[i]
            )));
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidDistribution(format!(
                "probabilities sum to {total}"
            )));
        }
        let probabilities: Vec<f64> = probabilities.iter().map(|p| p / total).collect();
        let (theta_min, theta_max) = importance_factors(&leverage, &probabilities, rank);
        Ok(SamplingPlan {
            probabilities,
            leverage,
            rank,
            theta_min,
            theta_max,
            kind,
        })
    }

    /// A user-supplied distribution over the rows of `x`.
    pub fn custom(x: &DenseMatrix, probabilities: Vec<f64>) -> Result<Self> {
        let f = factorize(x, None);
        let lev = leverage_from(x, &f);
        Self::from_parts(lev, f.numeric_rank, probabilities, PlanKind::Custom)
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn leverage(&self) -> &[f64] {
        &self.leverage
    }

    /// Numeric rank the leverage scores were computed at.
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn theta_min(&self) -> f64 {
        self.theta_min
    }

    pub fn theta_max(&self) -> f64 {
        self.theta_max
    }

    pub fn kind(&self) -> PlanKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.probabilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }

    /// `l_i / (m pi_i)`, zero where `l_i = 0`, infinite where `l_i > 0 = pi_i`.
    pub fn inclusion_ratio(&self, i: usize, m: usize) -> f64 {
        let l = self.leverage[i];
        if l == 0.0 {
            0.0
        } else if self.probabilities[i] == 0.0 {
            f64::INFINITY
        } else {
            l / (m as f64 * self.probabilities[i])
        }
    }

    /// Per-row debias factor `1/sqrt(1 - l_i/(m pi_i))` for every row that
    /// can be drawn; `None` for rows with zero probability.
    ///
    /// Fails if any drawable row violates the floor, i.e. the debiased
    /// estimator is undefined with positive probability.
    pub fn debias_factors(&self, m: usize, floor: f64) -> Result<Vec<Option<f64>>> {
        (0..self.len())
            .map(|i| {
                if self.probabilities[i] == 0.0 {
                    Ok(None)
                } else {
                    debias_factor(self.inclusion_ratio(i, m), floor, i).map(Some)
                }
            })
            .collect()
    }

    /// Alias-table sampler over the support of the distribution.
    pub fn sampler(&self) -> RowSampler {
        RowSampler::new(&self.probabilities)
    }
}

fn debias_factor(ratio: f64, floor: f64, row: usize) -> Result<f64> {
    let margin = 1.0 - ratio;
    if margin > floor {
        Ok(1.0 / margin.sqrt())
    } else {
        Err(Error::DebiasUndefined { row, margin })
    }
}

/// `(min, max)` of `l_i / (pi_i * rank)` over rows with `l_i > 0`.
fn importance_factors(leverage: &[f64], probabilities: &[f64], rank: usize) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = 0.0_f64;
    for (l, p) in leverage.iter().zip(probabilities) {
        if *l > 0.0 {
            let ratio = if *p > 0.0 {
                l / (p * rank as f64)
            } else {
                f64::INFINITY
            };
            lo = lo.min(ratio);
            hi = hi.max(ratio);
        }
    }
    if lo.is_infinite() && hi == 0.0 {
        (1.0, 1.0)
    } else {
        (lo, hi)
    }
}

/// Builds one of the standard sampling distributions for the rows of `x`.
pub fn build_distribution(x: &DenseMatrix, kind: PlanKind) -> Result<SamplingPlan> {
    let n = x.rows();
    let f = factorize(x, None);
    let lev = leverage_from(x, &f);
    let rank = f.numeric_rank;
    let lev_sum: f64 = lev.iter().sum();
    let leverage_probs = || -> Result<Vec<f64>> {
        if rank == 0 {
            return Err(Error::InvalidDistribution(
                "leverage sampling needs a nonzero matrix".into(),
            ));
        }
        Ok(lev.iter().map(|l| l / lev_sum).collect())
    };
    let probs = match kind {
        PlanKind::Uniform => vec![1.0 / n as f64; n],
        PlanKind::RowNorm => {
            let norms: Vec<f64> = (0..n).map(|i| x.row(i).norm_squared()).collect();
            let total: f64 = norms.iter().sum();
            if total == 0.0 {
                return Err(Error::AllZeroRows);
            }
            norms.iter().map(|v| v / total).collect()
        }
        PlanKind::ExactLeverage => leverage_probs()?,
        PlanKind::Shrinkage(lambda) => {
            if !(0.0..=1.0).contains(&lambda) {
                return Err(Error::InvalidDistribution(format!(
                    "shrinkage lambda {lambda} outside [0, 1]"
                )));
            }
            let lp = leverage_probs()?;
            lp.iter()
                .map(|q| lambda * q + (1.0 - lambda) / n as f64)
                .collect()
        }
        PlanKind::Custom => {
            return Err(Error::InvalidDistribution(
                "custom plans are built with SamplingPlan::custom".into(),
            ))
        }
    };
    SamplingPlan::from_parts(lev, rank, probs, kind)
}

/// O(1)-per-draw sampler over the support of a distribution. Rows with zero
/// probability are excluded before the alias table is built, so they can
/// never be drawn.
#[derive(Clone, Debug)]
pub struct RowSampler {
    support: Vec<usize>,
    alias: WeightedAliasIndex<f64>,
}

impl RowSampler {
    fn new(probabilities: &[f64]) -> Self {
        let support: Vec<usize> = (0..probabilities.len())
            .filter(|&i| probabilities[i] > 0.0)
            .collect();
        let weights = support.iter().map(|&i| probabilities[i]).collect();
        let alias = WeightedAliasIndex::new(weights).expect("plan has positive total mass");
        RowSampler { support, alias }
    }

    pub fn draw_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.support[self.alias.sample(rng)]
    }

    /// `m` i.i.d. indices with base weights `1/sqrt(m pi_i)`.
    pub fn draw<R: Rng + ?Sized>(&self, plan: &SamplingPlan, m: usize, rng: &mut R) -> RowSample {
        let indices: Vec<usize> = (0..m).map(|_| self.draw_index(rng)).collect();
        let base_weights = indices
            .iter()
            .map(|&i| 1.0 / (m as f64 * plan.probabilities[i]).sqrt())
            .collect();
        RowSample {
            indices,
            base_weights,
            debias_weights: None,
        }
    }
}

/// Rows drawn with replacement and their rescaling weights.
#[derive(Clone, Debug, PartialEq)]
pub struct RowSample {
    pub indices: Vec<usize>,
    pub base_weights: Vec<f64>,
    pub debias_weights: Option<Vec<f64>>,
}

impl RowSample {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Effective weight of each sampled row: base, times debias if requested.
    pub fn weights(&self, debiased: bool) -> Vec<f64> {
        match (&self.debias_weights, debiased) {
            (Some(d), true) => self
                .base_weights
                .iter()
                .zip(d)
                .map(|(b, d)| b * d)
                .collect(),
            _ => self.base_weights.clone(),
        }
    }

    /// Distinct rows with their summed squared weights, i.e. the nonzero
    /// diagonal of `S^T S`, sorted by row index.
    pub fn gram_diagonal(&self, debiased: bool) -> Vec<(usize, f64)> {
        merge_squared(&self.indices, &self.weights(debiased))
    }
}

pub(crate) fn merge_squared(indices: &[usize], weights: &[f64]) -> Vec<(usize, f64)> {
    let mut pairs: Vec<(usize, f64)> = indices
        .iter()
        .zip(weights)
        .map(|(&i, w)| (i, w * w))
        .collect();
    pairs.sort_by_key(|(i, _)| *i);
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(pairs.len());
    for (i, w2) in pairs {
        match out.last_mut() {
            Some((j, acc)) if *j == i => *acc += w2,
            _ => out.push((i, w2)),
        }
    }
    out
}

/// Draws `m` rows i.i.d. from the plan.
pub fn draw_sample<R: Rng + ?Sized>(plan: &SamplingPlan, m: usize, rng: &mut R) -> Result<RowSample> {
    if m == 0 {
        return Err(Error::InvalidDimensions("sketch size m must be >= 1".into()));
    }
    Ok(plan.sampler().draw(plan, m, rng))
}

/// Attaches `1/sqrt(1 - l_i/(m pi_i))` to every drawn row, with `m` the
/// sample size.
pub fn attach_debias_weights(
    mut sample: RowSample,
    plan: &SamplingPlan,
    floor: f64,
) -> Result<RowSample> {
    let m = sample.len();
    let weights = sample
        .indices
        .iter()
        .map(|&i| debias_factor(plan.inclusion_ratio(i, m), floor, i))
        .collect::<Result<Vec<f64>>>()?;
    sample.debias_weights = Some(weights);
    Ok(sample)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dm(rows: usize, cols: usize, v: &[f64]) -> DenseMatrix {
        DenseMatrix::from_row_slice(rows, cols, v).unwrap()
    }

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
    fn exact_leverage_on_ones() {
        let plan = build_distribution(&dm(3, 1, &[1.0, 1.0, 1.0]), PlanKind::ExactLeverage).unwrap();
        for p in plan.probabilities() {
            assert_abs_diff_eq!(*p, 1.0 / 3.0, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(plan.theta_min(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(plan.theta_max(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn uniform_on_block_design_is_half_approximation() {
        let x = block_design();
        let plan = SamplingPlan::custom(&x, vec![1.0 / 8.0; 8]).unwrap();
        // l/(pi p) in {1/2, 3/2}
        assert_abs_diff_eq!(plan.theta_min(), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(plan.theta_max(), 1.5, epsilon = 1e-12);
        // pi_i >= (1/2) l_i / p
        for (l, p) in plan.leverage().iter().zip(plan.probabilities()) {
            assert!(*p >= 0.5 * l / 4.0 - 1e-15);
        }
    }

    #[test]
    fn row_norm_equals_half_leverage() {
        let x = dm(4, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let plan = build_distribution(&x, PlanKind::RowNorm).unwrap();
        for (p, e) in plan.probabilities().iter().zip([0.5, 0.5, 0.0, 0.0]) {
            assert_abs_diff_eq!(*p, e, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(plan.theta_min(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(plan.theta_max(), 1.0, epsilon = 1e-12);
        assert_eq!(
            build_distribution(&DenseMatrix::zeros(3, 2), PlanKind::RowNorm).unwrap_err(),
            Error::AllZeroRows
        );
    }

    #[test]
    fn shrinkage_interpolates_and_validates() {
        let x = dm(4, 1, &[1.0, 2.0, 3.0, 4.0]);
        let lev = build_distribution(&x, PlanKind::ExactLeverage).unwrap();
        let sh = build_distribution(&x, PlanKind::Shrinkage(0.25)).unwrap();
        for (a, b) in lev.probabilities().iter().zip(sh.probabilities()) {
            assert_abs_diff_eq!(*b, 0.25 * a + 0.75 / 4.0, epsilon = 1e-15);
        }
        assert!(build_distribution(&x, PlanKind::Shrinkage(1.5)).is_err());
        let total: f64 = sh.probabilities().iter().sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
        assert!(sh.theta_min() <= 1.0 && sh.theta_max() >= 1.0);
    }

    #[test]
    fn custom_rejects_bad_distributions() {
        let x = dm(2, 1, &[1.0, 1.0]);
        assert!(SamplingPlan::custom(&x, vec![0.5, 0.6]).is_err());
        assert!(SamplingPlan::custom(&x, vec![1.5, -0.5]).is_err());
        assert!(SamplingPlan::custom(&x, vec![1.0]).is_err());
    }

    #[test]
    fn degenerate_distribution_draws() {
        let x = dm(3, 1, &[1.0, 2.0, 3.0]);
        let plan = SamplingPlan::custom(&x, vec![1.0, 0.0, 0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = draw_sample(&plan, 4, &mut rng).unwrap();
        assert_eq!(s.indices, vec![0, 0, 0, 0]);
        for w in &s.base_weights {
            assert_abs_diff_eq!(*w, 0.5, epsilon = 1e-15);
        }
        assert!(draw_sample(&plan, 0, &mut rng).is_err());
    }

    #[test]
    fn uniform_draw_is_reproducible() {
        let x = dm(3, 1, &[1.0, 2.0, 3.0]);
        let plan = build_distribution(&x, PlanKind::Uniform).unwrap();
        let a = draw_sample(&plan, 2, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = draw_sample(&plan, 2, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        for w in &a.base_weights {
            assert_abs_diff_eq!(*w, (1.5f64).sqrt(), epsilon = 1e-15);
        }
    }

    #[test]
    fn zero_probability_rows_never_drawn() {
        let probs = vec![0.0, 0.3, 0.0, 0.7, 0.0];
        let x = DenseMatrix::new(DMatrix::from_element(5, 1, 1.0)).unwrap();
        let plan = SamplingPlan::custom(&x, probs).unwrap();
        let sampler = plan.sampler();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100_000 {
            let i = sampler.draw_index(&mut rng);
            assert!(i == 1 || i == 3);
        }
    }

    #[test]
    fn empirical_frequencies_match_binomial_oracle() {
        let probs = vec![0.1, 0.2, 0.3, 0.4];
        let x = DenseMatrix::new(DMatrix::from_element(4, 1, 1.0)).unwrap();
        let plan = SamplingPlan::custom(&x, probs.clone()).unwrap();
        let sampler = plan.sampler();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 1_000_000usize;
        let mut counts = [0usize; 4];
        for _ in 0..draws {
            counts[sampler.draw_index(&mut rng)] += 1;
        }
        for (c, p) in counts.iter().zip(&probs) {
            let freq = *c as f64 / draws as f64;
            let se = (p * (1.0 - p) / draws as f64).sqrt();
            assert!((freq - p).abs() < 4.0 * se, "freq {freq} vs {p}");
        }
    }

    #[test]
    fn debias_weight_examples() {
        // exact leverage, m = 8, p = 4: constant sqrt(m/(m-p)) = sqrt(2)
        let x = block_design();
        let plan = build_distribution(&x, PlanKind::ExactLeverage).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = draw_sample(&plan, 8, &mut rng).unwrap();
        let s = attach_debias_weights(s, &plan, DEFAULT_DEBIAS_FLOOR).unwrap();
        for w in s.debias_weights.as_ref().unwrap() {
            assert_abs_diff_eq!(*w, 2f64.sqrt(), epsilon = 1e-12);
        }

        // uniform on the block design, m = 8: row with l = 3/4 gets weight 2
        let plan = SamplingPlan::custom(&x, vec![1.0 / 8.0; 8]).unwrap();
        let s = RowSample {
            indices: vec![1, 0, 2, 3, 4, 5, 6, 7],
            base_weights: vec![1.0; 8],
            debias_weights: None,
        };
        let s = attach_debias_weights(s, &plan, DEFAULT_DEBIAS_FLOOR).unwrap();
        let d = s.debias_weights.unwrap();
        assert_abs_diff_eq!(d[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d[1], 1.0 / (0.75f64).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn zero_leverage_rows_get_unit_weight() {
        let x = dm(3, 1, &[1.0, 0.0, 1.0]);
        let plan = build_distribution(&x, PlanKind::Uniform).unwrap();
        let s = RowSample {
            indices: vec![1, 1, 1, 1, 1, 1],
            base_weights: vec![1.0; 6],
            debias_weights: None,
        };
        let s = attach_debias_weights(s, &plan, DEFAULT_DEBIAS_FLOOR).unwrap();
        assert!(s.debias_weights.unwrap().iter().all(|w| *w == 1.0));
    }

    #[test]
    fn debias_undefined_when_sample_too_small() {
        let x = block_design();
        let plan = SamplingPlan::custom(&x, vec![1.0 / 8.0; 8]).unwrap();
        // m = 4: l/(m pi) = 3/4 * 2 = 1.5 > 1 for odd rows
        let s = RowSample {
            indices: vec![1, 1, 1, 1],
            base_weights: vec![1.0; 4],
            debias_weights: None,
        };
        assert!(matches!(
            attach_debias_weights(s, &plan, DEFAULT_DEBIAS_FLOOR),
            Err(Error::DebiasUndefined { row: 1, .. })
        ));
        assert!(plan.debias_factors(4, DEFAULT_DEBIAS_FLOOR).is_err());
        assert!(plan.debias_factors(8, DEFAULT_DEBIAS_FLOOR).is_ok());
    }

    #[test]
    fn gram_diagonal_merges_duplicates() {
        let s = RowSample {
            indices: vec![2, 0, 2],
            base_weights: vec![1.0, 2.0, 3.0],
            debias_weights: Some(vec![1.0, 1.0, 2.0]),
        };
        assert_eq!(s.gram_diagonal(false), vec![(0, 4.0), (2, 10.0)]);
        assert_eq!(s.gram_diagonal(true), vec![(0, 4.0), (2, 37.0)]);
    }
}
