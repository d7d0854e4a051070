mod common;

use approx::assert_relative_eq;
use common::{lqr_gain, randn_vec, random_spd, random_system, rng};
use debse::estimator::{
    kf_step_detailed, open_loop_variance, open_loop_variance_pow, predict_m_steps,
    predicted_mean_closed_form, GaussianBelief, VarianceSchedule,
};
use debse::numerics::{
    is_symmetric_psd, mat_pow, max_abs, solve_lqr, spectral_radius,
    steady_state_posterior_variance, variance_step, Matrix, Vector,
};
use debse::plant::SystemMatrices;
use proptest::prelude::*;

fn rel(a: &Matrix, b: &Matrix) -> f64 {
    max_abs(&(a - b)) / max_abs(b).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn steady_state_is_a_psd_fixed_point(seed in any::<u64>(), n in 1usize..5, m in 1usize..3, radius in 0.3f64..1.3) {
        let sys = random_system(&mut rng(seed), n, 1, m, radius);
        let p = steady_state_posterior_variance(&sys).unwrap();
        prop_assert!(is_symmetric_psd(&p, 1e-12));
        let (_, _, next) = variance_step(&p, &sys).unwrap();
        prop_assert!(rel(&next, &p) <= 1e-9);
    }

    #[test]
    fn joseph_matches_short_form(seed in any::<u64>(), n in 1usize..5) {
        let mut r = rng(seed);
        let sys = random_system(&mut r, n, 1, 2, 0.9);
        let p = random_spd(&mut r, n, 0.01, 1.0);
        let (prior, gain, post) = variance_step(&p, &sys).unwrap();
        let short = (Matrix::identity(n, n) - &gain * &sys.h) * &prior;
        prop_assert!(rel(&post, &short) <= 1e-9);
        prop_assert!(is_symmetric_psd(&post, 1e-12));
        // Measuring never increases the variance.
        prop_assert!(is_symmetric_psd(&(&prior - &post), 1e-9));
    }

    #[test]
    fn schedule_matches_filter(seed in any::<u64>(), n in 1usize..4, len in 1usize..8) {
        let mut r = rng(seed);
        let sys = random_system(&mut r, n, 1, 1, 1.1);
        let p0 = random_spd(&mut r, n, 0.01, 1.0);
        let sched = VarianceSchedule::build(&sys, 3, p0.clone(), len).unwrap();
        let mut belief = GaussianBelief::new(randn_vec(&mut r, n), p0, 3);
        for k in 4..=3 + len {
            let y = randn_vec(&mut r, 1);
            let upd = kf_step_detailed(&belief, &Vector::zeros(1), &y, &sys).unwrap();
            prop_assert_eq!(sched.posterior(k).unwrap(), &upd.belief.cov);
            prop_assert_eq!(sched.prior(k).unwrap(), &upd.prior_cov);
            prop_assert_eq!(sched.gain(k).unwrap(), &upd.gain);
            belief = upd.belief;
        }
        prop_assert!(sched.posterior(4 + len).is_err());
    }

    #[test]
    fn prediction_recursion_matches_closed_form(seed in any::<u64>(), horizon in 0usize..7) {
        let mut r = rng(seed);
        let sys = random_system(&mut r, 3, 1, 1, 1.05);
        let f = lqr_gain(&sys);
        let belief = GaussianBelief::new(randn_vec(&mut r, 3), random_spd(&mut r, 3, 0.01, 1.0), 0);
        let xi: Vec<Vector> = (0..horizon).map(|_| randn_vec(&mut r, 1)).collect();
        let pred = predict_m_steps(&belief, &xi, &f, &sys, horizon).unwrap();
        let closed = predicted_mean_closed_form(&belief.mean, &xi, &sys.closed_loop(&f), &sys.b);
        prop_assert!((&pred.mean - &closed).amax() <= 1e-9 * closed.amax().max(1.0));
        prop_assert_eq!(pred.cov, open_loop_variance_pow(&belief.cov, &sys, horizon).unwrap());
        prop_assert_eq!(pred.step, horizon);
    }

    #[test]
    fn lqr_stabilizes(seed in any::<u64>(), n in 1usize..5, radius in 0.5f64..1.5) {
        let sys = random_system(&mut rng(seed), n, 2, 1, radius);
        let f = solve_lqr(&sys.a, &sys.b, &Matrix::identity(n, n), &Matrix::identity(2, 2)).unwrap();
        prop_assert!(spectral_radius(&sys.closed_loop(&f)).unwrap() < 1.0);
    }

    #[test]
    fn mat_pow_is_repeated_product(seed in any::<u64>(), k in 0usize..12) {
        let a = common::randn(&mut rng(seed), 3, 3) * 0.5;
        let mut direct = Matrix::identity(3, 3);
        for _ in 0..k {
            direct = &direct * &a;
        }
        prop_assert!(rel(&mat_pow(&a, k), &direct) <= 1e-12);
    }
}

#[test]
fn scalar_filter_by_hand() {
    let sys = SystemMatrices::scalar(0.98, 0.0, 1.0, 0.1, 0.1);
    let p = Matrix::from_element(1, 1, 0.5);
    let (prior, gain, post) = variance_step(&p, &sys).unwrap();
    let pm = 0.98 * 0.98 * 0.5 + 0.1;
    assert_relative_eq!(prior[(0, 0)], pm, epsilon = 1e-15);
    assert_relative_eq!(gain[(0, 0)], pm / (pm + 0.1), epsilon = 1e-15);
    assert_relative_eq!(post[(0, 0)], pm * 0.1 / (pm + 0.1), epsilon = 1e-15);
    assert_eq!(open_loop_variance(&p, &sys).unwrap()[(0, 0)], pm);
}

#[test]
fn unstable_unobservable_plant_fails() {
    let sys = SystemMatrices::scalar(1.5, 0.0, 0.0, 0.1, 0.1);
    assert!(steady_state_posterior_variance(&sys).is_err());
}
