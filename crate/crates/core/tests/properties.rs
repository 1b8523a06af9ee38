//! Cross-module properties: config to scenario to certificates and
//! simulations, plus invariants checked with proptest.

use proptest::prelude::*;

use rclf_core::certify::{
    escape_level_radius, lyapunov_derivative, reach_time_bound, synthesize_rclf_constants,
};
use rclf_core::chemostat::check_s2;
use rclf_core::dynamics::{integrate_rk4, DisturbanceSignal};
use rclf_core::feedback::{compute_backstepping_gains, TriangularSystem, GAIN_MARGIN};
use rclf_core::harness::{chemostat_closed_loop, run_urgas_suite, sample_ball, trial_seed};
use rclf_core::{ChemostatScenario, FeedbackLaw, RclfConstants, ScenarioConfig, UrgasConfig};

const DEMO: &str = include_str!("../../../configs/demo.toml");

fn demo() -> (ChemostatScenario, RclfConstants) {
    let sc = ScenarioConfig::from_toml_str(DEMO)
        .unwrap()
        .scenario()
        .unwrap();
    let s2 = check_s2(&sc).unwrap();
    let k = synthesize_rclf_constants(&sc, &s2).unwrap();
    (sc, k)
}

#[test]
fn config_scenario_matches_direct_construction() {
    let (sc, k) = demo();
    assert!((sc.s_s - 506.72).abs() < 1e-12);
    assert!(sc.x_s > 0.0 && sc.d_s > 0.0);
    k.resubstitute(&sc).unwrap();
}

#[test]
fn rk4_error_is_fourth_order_on_oscillator() {
    let d = DisturbanceSignal::constant(vec![0.0], 2.0).unwrap();
    let err = |h: f64| {
        let tr = integrate_rk4(
            |_, x, _, out: &mut [f64]| {
                out[0] = x[1];
                out[1] = -x[0];
            },
            &[1.0, 0.0],
            &d,
            2.0,
            h,
        )
        .unwrap();
        let f = tr.final_state();
        (f[0] - 2.0f64.cos()).hypot(f[1] + 2.0f64.sin())
    };
    let ratio = err(0.1) / err(0.05);
    assert!((13.0..=19.0).contains(&ratio), "{ratio}");
}

#[test]
fn small_urgas_suite_is_reproducible() {
    let (sc, _) = demo();
    let law = FeedbackLaw::relaxed(1.0, 1.0).unwrap();
    let sys = chemostat_closed_loop(&sc, &law).unwrap();
    let cfg = UrgasConfig {
        trials: 6,
        horizon: 30.0,
        delta_probe_trials: 2,
        delta_bisection_iters: 3,
        ..UrgasConfig::default()
    };
    let a = run_urgas_suite(&sys, &cfg).unwrap();
    let b = run_urgas_suite(&sys, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.converged_fraction, 1.0);
    assert!(a.tau_monotone && a.delta_monotone);
}

#[test]
fn reach_time_bound_is_zero_inside_and_grows_outside() {
    let (c, eps_hat, delta0, k_w) = (0.97, 0.02, 0.04, 0.7);
    let inside = reach_time_bound(c, -0.01, eps_hat, delta0, k_w, 1.0).unwrap();
    assert_eq!(inside.t, 0.0);
    let near = reach_time_bound(c, 0.5, eps_hat, delta0, k_w, 1.0).unwrap();
    let far = reach_time_bound(c, 2.0, eps_hat, delta0, k_w, 1.0).unwrap();
    assert!(far.t > near.t && near.t > 0.0);
    assert!(escape_level_radius(c, 2.0) >= escape_level_radius(c, 1.0));
}

#[test]
fn backstepping_gains_meet_margin_for_both_sizes() {
    for n in [2, 3] {
        let sys = TriangularSystem::benchmark(n, 0.1).unwrap();
        let g = compute_backstepping_gains(&sys.bounds, n, 2.0).unwrap();
        assert!(g.min_margin(&sys.bounds) >= GAIN_MARGIN * (1.0 - 1e-12));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn lyapunov_derivative_is_affine_in_disturbance(
        x1 in -2.0f64..2.0,
        x2 in -2.0f64..2.0,
        t in 0.0f64..1.0,
    ) {
        let (sc, k) = demo();
        let law = FeedbackLaw::relaxed(1.0, 1.0).unwrap();
        let u = law.eval(&sc, x1, x2);
        let (da, db) = ([0.0, sc.a], [sc.a, 0.0]);
        let mix = [t * da[0] + (1.0 - t) * db[0], t * da[1] + (1.0 - t) * db[1]];
        let va = lyapunov_derivative(&sc, &k, u, x1, x2, da);
        let vb = lyapunov_derivative(&sc, &k, u, x1, x2, db);
        let vm = lyapunov_derivative(&sc, &k, u, x1, x2, mix);
        let scale = va.abs().max(vb.abs()).max(1.0);
        prop_assert!((vm - (t * va + (1.0 - t) * vb)).abs() <= 1e-10 * scale);
    }

    #[test]
    fn relaxed_law_ignores_uncertainty_magnitude(
        x1 in -5.0f64..5.0,
        x2 in -5.0f64..5.0,
        a in 0.0f64..10.0,
    ) {
        let (sc, _) = demo();
        let law = FeedbackLaw::relaxed(1.0, 1.0).unwrap();
        prop_assert_eq!(
            law.eval(&sc, x1, x2).to_bits(),
            law.eval(&sc.with_uncertainty(a), x1, x2).to_bits()
        );
    }

    #[test]
    fn lyapunov_function_is_positive_definite(x1 in -5.0f64..5.0, x2 in -5.0f64..5.0) {
        let (_, k) = demo();
        let v = k.lyapunov(x1, x2);
        if x1 == 0.0 && x2 == 0.0 {
            prop_assert_eq!(v, 0.0);
        } else {
            prop_assert!(v > 0.0);
        }
    }

    #[test]
    fn ball_samples_stay_inside(seed in any::<u64>(), r in 0.1f64..10.0) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(trial_seed(seed, 1, 0));
        let x = sample_ball(&mut rng, 3, r);
        prop_assert!(x.iter().map(|v| v * v).sum::<f64>().sqrt() <= r);
    }
}
