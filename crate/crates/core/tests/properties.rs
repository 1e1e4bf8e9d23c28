use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use oblique::dataio::{load_matrix_csv, synth_coherent, synth_gaussian, synth_powerlaw_rows, write_matrix_csv};
use oblique::inversion::{solve_fixed_point_d, FixedPointOptions};
use oblique::oracle::{enumerate_expectation_beta, enumerate_expectation_projection, EnumerationBudget};
use oblique::sketching::{attach_debias_weights, build_distribution, draw_sample, PlanKind, SamplingPlan, DEFAULT_DEBIAS_FLOOR};
use oblique::DenseMatrix;

fn gaussian(n: usize, p: usize, seed: u64) -> DenseMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DenseMatrix::new(DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng))).unwrap()
}

fn permute_rows(a: &DMatrix<f64>, perm: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(perm[i], j)])
}

#[test]
fn row_sampling_gram_is_unbiased() {
    let x = gaussian(30, 3, 1);
    let xtx = x.as_matrix().transpose() * x.as_matrix();
    for kind in [PlanKind::Uniform, PlanKind::RowNorm, PlanKind::Shrinkage(0.3)] {
        let plan = build_distribution(&x, kind).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let trials = 20_000;
        let mut sum = DMatrix::zeros(3, 3);
        let mut sq = DMatrix::zeros(3, 3);
        for _ in 0..trials {
            let s = draw_sample(&plan, 10, &mut rng).unwrap();
            let mut g = DMatrix::zeros(3, 3);
            for (i, w2) in s.gram_diagonal(false) {
                let r = x.as_matrix().row(i);
                g += r.transpose() * r * w2;
            }
            sq += g.component_mul(&g);
            sum += g;
        }
        let t = trials as f64;
        let mean = &sum / t;
        for a in 0..3 {
            for b in 0..3 {
                let var = sq[(a, b)] / t - mean[(a, b)].powi(2);
                let se = (var / t).sqrt();
                assert!(
                    (mean[(a, b)] - xtx[(a, b)]).abs() <= 5.0 * se,
                    "{kind:?} entry ({a},{b}): {} vs {} (se {se})",
                    mean[(a, b)],
                    xtx[(a, b)]
                );
            }
        }
    }
}

#[test]
fn fixed_point_stays_in_unit_interval() {
    let fixtures = [
        synth_coherent(256, 4, 1, &mut ChaCha8Rng::seed_from_u64(1)).unwrap().x,
        gaussian(128, 8, 2),
        synth_powerlaw_rows(200, 5, 0.4, &mut ChaCha8Rng::seed_from_u64(3)).unwrap().x,
    ];
    for x in &fixtures {
        for kind in [PlanKind::Uniform, PlanKind::RowNorm] {
            let plan = build_distribution(x, kind).unwrap();
            let m = 16 * x.cols();
            let fp = solve_fixed_point_d(x, &plan, m, FixedPointOptions::default()).unwrap();
            assert!(fp.d.iter().all(|d| *d > 0.0 && *d <= 1.0));
            assert_eq!(fp.nonmonotone_steps, 0);
        }
    }
}

#[test]
fn synthetic_generators_are_pure() {
    let run = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (
            synth_gaussian(20, 3, &mut rng).unwrap(),
            synth_coherent(20, 3, 2, &mut rng).unwrap(),
            synth_powerlaw_rows(20, 3, 0.5, &mut rng).unwrap(),
        )
    };
    assert_eq!(run(4), run(4));
    assert_ne!(run(4).0, run(5).0);
}

#[test]
fn enumeration_ignores_row_order() {
    let x = gaussian(5, 2, 3);
    let y = gaussian(5, 1, 4);
    let plan = build_distribution(&x, PlanKind::RowNorm).unwrap();
    let perm = [3, 0, 4, 2, 1];
    let xp = DenseMatrix::new(permute_rows(x.as_matrix(), &perm)).unwrap();
    let yp = DenseMatrix::new(permute_rows(y.as_matrix(), &perm)).unwrap();
    let probs: Vec<f64> = perm.iter().map(|&i| plan.probabilities()[i]).collect();
    let plan_p = SamplingPlan::custom(&xp, probs).unwrap();
    for debiased in [false, true] {
        let a = enumerate_expectation_beta(&x, &y, &plan, 5, debiased, EnumerationBudget::default()).unwrap();
        let b = enumerate_expectation_beta(&xp, &yp, &plan_p, 5, debiased, EnumerationBudget::default()).unwrap();
        assert!((a.e_beta - b.e_beta).amax() <= 1e-12);
        assert!((a.exact_bias - b.exact_bias).abs() <= 1e-12 * (1.0 + a.exact_bias));
        assert!((a.weight_total - 1.0).abs() <= 1e-12);
    }
    let pa = enumerate_expectation_projection(&x, &plan, 4, false, EnumerationBudget::default()).unwrap();
    let pb = enumerate_expectation_projection(&xp, &plan_p, 4, false, EnumerationBudget::default()).unwrap();
    assert!((pa.bias_f2 - pb.bias_f2).abs() <= 1e-12);
    assert!((pa.weight_total - 1.0).abs() <= 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn exact_leverage_debias_is_constant(seed in 0u64..10_000, p in 1usize..5, extra in 1usize..20) {
        let x = gaussian(40, p, seed);
        let plan = build_distribution(&x, PlanKind::ExactLeverage).unwrap();
        let m = p + extra;
        let s = draw_sample(&plan, m, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let s = attach_debias_weights(s, &plan, DEFAULT_DEBIAS_FLOOR).unwrap();
        let want = (m as f64 / (m - p) as f64).sqrt();
        for w in s.debias_weights.unwrap() {
            prop_assert!((w - want).abs() <= 1e-12 * want);
        }
    }

    #[test]
    fn csv_round_trip_is_exact(
        entries in proptest::collection::vec(
            prop_oneof![any::<f64>().prop_filter("finite", |v| v.is_finite()), -1e3..1e3f64],
            1..40,
        ),
        cols in 1usize..5,
    ) {
        let rows = entries.len().div_ceil(cols);
        let mut flat = entries.clone();
        flat.resize(rows * cols, 0.0);
        let x = DenseMatrix::from_row_slice(rows, cols, &flat).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        write_matrix_csv(&path, &x).unwrap();
        let back = load_matrix_csv(&path, false, None).unwrap();
        prop_assert_eq!(back.x.to_row_major(), flat);
    }
}
