mod common;

use common::{randn, randn_vec, random_system, rng};
use debse::control::{aggregate_xi, assemble_closed_loop, control_input, ControlLaw};
use debse::network_sim::{allocation_log, broadcast, lead_time_violations};
use debse::numerics::{Matrix, Vector};
use debse::plant::{build_platoon_model, propagate, NoiseSource, PlatoonConfig, SystemMatrices};
use debse::remote_predictor::{remote_step, RemoteEstimate};
use debse::trigger::TriggerBook;
use proptest::prelude::*;

#[test]
fn drop_rate_matches_probability() {
    let mut noise = NoiseSource::new(5, 3);
    let (agents, rounds, p) = (6, 4000, 0.2);
    let mut dropped = 0usize;
    for r in 0..rounds {
        let senders = (0..agents).map(|i| (i, Vector::zeros(1))).collect();
        let round = broadcast(r, senders, agents, p, &mut noise).unwrap();
        for d in &round.deliveries {
            assert!(d.delivered[d.sender]);
            dropped += d.delivered.iter().filter(|&&b| !b).count();
        }
    }
    let pairs = (rounds * agents * (agents - 1)) as f64;
    let rate = dropped as f64 / pairs;
    let se = (p * (1.0 - p) / pairs).sqrt();
    assert!((rate - p).abs() <= 4.0 * se, "rate {rate}");
}

#[test]
fn bus_rejects_bad_input() {
    let mut noise = NoiseSource::new(1, 3);
    assert!(broadcast(0, vec![], 2, -0.1, &mut noise).is_err());
    assert!(broadcast(0, vec![(5, Vector::zeros(1))], 2, 0.0, &mut noise).is_err());
}

#[test]
fn allocation_log_orders_and_flags() {
    let mut a = TriggerBook::new(2);
    a.record(1, true, None).unwrap();
    a.record(5, true, Some(3)).unwrap();
    a.record(9, true, Some(8)).unwrap();
    let mut b = TriggerBook::new(2);
    b.record(1, true, None).unwrap();
    b.record(4, true, Some(2)).unwrap();
    b.record(30, true, Some(28)).unwrap();
    let log = allocation_log(&[&a, &b], 10);
    let order: Vec<(usize, usize)> = log.iter().map(|e| (e.round, e.agent)).collect();
    assert_eq!(order, vec![(1, 0), (1, 1), (4, 1), (5, 0), (9, 0)]);
    let late = lead_time_violations(&log, 2);
    assert_eq!(late.len(), 1);
    assert_eq!((late[0].round, late[0].lead_time), (9, Some(1)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn remote_copy_resets_or_predicts(seed in any::<u64>(), received in any::<bool>()) {
        let mut r = rng(seed);
        let closed = randn(&mut r, 3, 3);
        let b = randn(&mut r, 3, 2);
        let xi = randn_vec(&mut r, 2);
        let est = RemoteEstimate::new(1, randn_vec(&mut r, 3), 4);
        let x_hat = randn_vec(&mut r, 3);
        let next = remote_step(&est, &closed, &b, &xi, received.then_some(&x_hat)).unwrap();
        prop_assert_eq!(next.step, 5);
        prop_assert_eq!(next.agent, 1);
        if received {
            prop_assert_eq!(next.mean, x_hat);
        } else {
            prop_assert_eq!(next.mean, &closed * &est.mean + &b * &xi);
        }
    }

    #[test]
    fn noise_streams_are_reproducible(seed in any::<u64>(), stream in 0u64..8) {
        let mut a = NoiseSource::new(seed, stream);
        let mut b = NoiseSource::new(seed, stream);
        prop_assert_eq!(a.standard_normal(5), b.standard_normal(5));
        let hw = Vector::from_vec(vec![0.5, 0.0, 2.0]);
        let u = a.uniform(&hw);
        prop_assert_eq!(&u, &b.uniform(&hw));
        prop_assert!(u[0].abs() <= 0.5 && u[1] == 0.0 && u[2].abs() <= 2.0);
        let mut c = NoiseSource::new(seed, stream + 1);
        prop_assert_ne!(c.standard_normal(5), NoiseSource::new(seed, stream).standard_normal(5));
    }

    /// The stacked closed loop reproduces the per-agent inputs when every
    /// copy equals the truth.
    #[test]
    fn ensemble_closed_loop_matches_agents(seed in any::<u64>(), agents in 2usize..4) {
        let mut r = rng(seed);
        let systems: Vec<SystemMatrices> = (0..agents).map(|_| random_system(&mut r, 2, 1, 1, 0.9)).collect();
        let refs: Vec<&SystemMatrices> = systems.iter().collect();
        let gains: Vec<Vec<Matrix>> = (0..agents).map(|_| (0..agents).map(|_| randn(&mut r, 1, 2) * 0.1).collect()).collect();
        let law = ControlLaw::new(gains, None).unwrap();
        let cl = assemble_closed_loop(&refs, &law).unwrap();
        let xs: Vec<Vector> = (0..agents).map(|_| randn_vec(&mut r, 2)).collect();
        let stacked = Vector::from_iterator(2 * agents, xs.iter().flat_map(|x| x.iter().copied()));
        let want = &cl.closed * &stacked;
        for i in 0..agents {
            let est: Vec<Option<&Vector>> = xs.iter().map(Some).collect();
            let xi = aggregate_xi(i, &est, &law).unwrap();
            let u = control_input(&xs[i], &xi, law.own_gain(i), None).unwrap();
            let next = propagate(&xs[i], &u, &Vector::zeros(2), &systems[i]).unwrap();
            let got = want.rows(2 * i, 2);
            prop_assert!((next - got).amax() <= 1e-12);
        }
    }
}

#[test]
fn control_input_with_reference() {
    let f = Matrix::from_row_slice(1, 2, &[-1.0, -2.0]);
    let x = Vector::from_vec(vec![3.0, 1.0]);
    let r = Vector::from_vec(vec![1.0, 1.0]);
    let xi = Vector::from_element(1, 0.5);
    let u = control_input(&x, &xi, &f, Some(&r)).unwrap();
    assert_eq!(u[0], -2.0 + 0.5);
    assert!(control_input(&x, &xi, &f, Some(&Vector::zeros(3))).is_err());
}

#[test]
fn missing_peer_estimate_is_an_error() {
    let g = |v: f64| Matrix::from_element(1, 1, v);
    let law = ControlLaw::new(vec![vec![g(-0.5), g(0.2)], vec![g(0.0), g(-0.5)]], None).unwrap();
    let x = Vector::from_element(1, 1.0);
    assert!(aggregate_xi(0, &[Some(&x), None], &law).is_err());
    // Agent 1 does not use agent 0.
    assert_eq!(aggregate_xi(1, &[None, Some(&x)], &law).unwrap()[0], 0.0);
}

#[test]
fn platoon_geometry() {
    let mut cfg = PlatoonConfig::new(4, 0.1);
    cfg.initial_gap = 12.0;
    let model = build_platoon_model(&cfg).unwrap();
    assert_eq!(model.vehicles(), 4);
    assert_eq!(model.relative_dim(), 7);
    let stacked = Vector::from_iterator(
        8,
        model.agents.iter().flat_map(|a| a.x0_mean.iter().copied()),
    );
    let rel = &model.to_relative * stacked;
    assert_eq!(rel, model.relative_reference(cfg.initial_speed, 12.0));
}
