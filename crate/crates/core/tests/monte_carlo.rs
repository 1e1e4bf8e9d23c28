use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use oblique::adversarial::lower_bound_instance;
use oblique::dataio::synth_gaussian;
use oblique::metrics::{monte_carlo_bias_variance, Arm, OlsExperiment, SketchFamily, ZetaPolicy};
use oblique::oracle::{enumerate_expectation_beta, EnumerationBudget};
use oblique::sketching::{build_distribution, PlanKind};

#[test]
fn monte_carlo_converges_to_enumeration() {
    let ds = synth_gaussian(6, 2, &mut ChaCha8Rng::seed_from_u64(21)).unwrap();
    let y = ds.y.unwrap();
    for (kind, debiased) in [(PlanKind::Uniform, false), (PlanKind::RowNorm, false), (PlanKind::ExactLeverage, true)] {
        let plan = build_distribution(&ds.x, kind).unwrap();
        let m = 5;
        let exact = enumerate_expectation_beta(&ds.x, &y, &plan, m, debiased, EnumerationBudget::default()).unwrap();
        let arm = if debiased { Arm::Debiased } else { Arm::Classical };
        let exp = OlsExperiment::new(&ds.x, &y, SketchFamily::RowSampling(plan), m, &[arm], ZetaPolicy::Disabled).unwrap();
        let st = monte_carlo_bias_variance(&exp, 200_000, 5).unwrap();
        assert!(
            (st.variance - exact.exact_variance).abs() <= 4.0 * st.variance_stderr,
            "{kind:?}: variance {} vs {} (se {})",
            st.variance,
            exact.exact_variance,
            st.variance_stderr
        );
        assert!(
            (st.bias - exact.exact_bias).abs() <= 4.0 * st.bias_stderr,
            "{kind:?}: bias {} vs {} (se {})",
            st.bias,
            exact.exact_bias,
            st.bias_stderr
        );
    }
}

#[test]
fn lower_bound_coordinates_shift_apart() {
    let inst = lower_bound_instance(1, 8).unwrap();
    let p = inst.p();
    for m in [8, 16, 64] {
        let exp = OlsExperiment::new(
            &inst.x,
            &inst.y,
            SketchFamily::RowSampling(inst.plan.clone()),
            m,
            &[Arm::Classical],
            ZetaPolicy::FullRank,
        )
        .unwrap();
        let st = monte_carlo_bias_variance(&exp, 100_000, 17).unwrap();
        let d1 = st.mean_estimate[(0, 0)] - inst.beta_star[(0, 0)];
        let dp = st.mean_estimate[(p - 1, 0)] - inst.beta_star[(p - 1, 0)];
        assert!(d1 < -3.0 * st.estimate_stderr[(0, 0)], "m={m}: first shift {d1}");
        assert!(dp > 3.0 * st.estimate_stderr[(p - 1, 0)], "m={m}: last shift {dp}");
    }
}
