//! Helpers shared by the integration tests.
#![allow(dead_code)]

use debse::control::ControlLaw;
use debse::numerics::{solve_lqr, spectral_radius, Matrix, Vector};
use debse::plant::{LinearModel, SystemMatrices};
use debse::scenarios::{Scenario, TriggerConfig};
use debse::trigger::{CostSchedule, TriggerKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

pub fn randn_vec(rng: &mut ChaCha8Rng, n: usize) -> Vector {
    Vector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Random SPD matrix with eigenvalues roughly in `[floor, floor + scale]`.
pub fn random_spd(rng: &mut ChaCha8Rng, n: usize, floor: f64, scale: f64) -> Matrix {
    let g = randn(rng, n, n);
    &g * g.transpose() * (scale / n as f64) + Matrix::identity(n, n) * floor
}

/// Random system with spectral radius of `A` near `radius`.
pub fn random_system(
    rng: &mut ChaCha8Rng,
    n: usize,
    p: usize,
    m: usize,
    radius: f64,
) -> SystemMatrices {
    let a0 = randn(rng, n, n);
    let rho = spectral_radius(&a0).unwrap();
    SystemMatrices {
        a: a0 * (radius / rho),
        b: randn(rng, n, p),
        h: randn(rng, m, n),
        q: random_spd(rng, n, 0.05, 0.2),
        r: random_spd(rng, m, 0.05, 0.2),
    }
}

/// LQR gain `F` for `(A, B)` with identity weights.
pub fn lqr_gain(sys: &SystemMatrices) -> Matrix {
    let n = sys.state_dim();
    let p = sys.input_dim();
    solve_lqr(
        &sys.a,
        &sys.b,
        &Matrix::identity(n, n),
        &Matrix::identity(p, p),
    )
    .unwrap()
}

/// Coordinated scenario of `agents` random 2-state agents under an ensemble
/// LQR with a nonzero reference.
pub fn coordinated_scenario(
    seed: u64,
    agents: usize,
    kind: TriggerKind,
    cost: f64,
    m: usize,
) -> Scenario {
    let mut r = rng(seed);
    let models: Vec<LinearModel> = (0..agents)
        .map(|_| {
            let sys = random_system(&mut r, 2, 1, 1, 1.02);
            LinearModel::gaussian(sys, randn_vec(&mut r, 2), Matrix::identity(2, 2) * 0.1).unwrap()
        })
        .collect();
    let a_blocks: Vec<&Matrix> = models.iter().map(|m| &m.nominal().a).collect();
    let b_blocks: Vec<&Matrix> = models.iter().map(|m| &m.nominal().b).collect();
    let a = debse::numerics::block_diag(&a_blocks);
    let b = debse::numerics::block_diag(&b_blocks);
    let n = a.nrows();
    let f = solve_lqr(
        &a,
        &b,
        &Matrix::identity(n, n),
        &Matrix::identity(agents, agents),
    )
    .unwrap();
    let law = ControlLaw::from_ensemble(&f, &vec![1; agents], &vec![2; agents], None)
        .unwrap()
        .with_reference(&randn_vec(&mut r, n))
        .unwrap();
    let closed = &a + &b * law.ensemble_gain();
    Scenario {
        name: format!("coordinated-{seed}"),
        agents: models,
        law,
        switch: None,
        trigger: TriggerConfig {
            kind,
            horizon_m: m,
            cost: CostSchedule::Constant(cost),
            cost_grid: vec![cost],
            m_cap: 1000,
        },
        p_drop: 0.0,
        horizon: 120,
        runs: 1,
        seed,
        reference_change: None,
        tracking: None,
        stability_matrix: Some(closed),
        allow_unstable: false,
        dt: None,
    }
}

/// Piecewise-linear interpolation of `(x, y)` points at `x0`; `None`
/// outside the covered range.
pub fn interpolate(points: &[(f64, f64)], x0: f64) -> Option<f64> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    pts.dedup_by(|a, b| a.0 == b.0);
    if pts.is_empty() || x0 < pts[0].0 || x0 > pts[pts.len() - 1].0 {
        return None;
    }
    for w in pts.windows(2) {
        let ((x1, y1), (x2, y2)) = (w[0], w[1]);
        if x0 >= x1 && x0 <= x2 {
            let t = if x2 > x1 { (x0 - x1) / (x2 - x1) } else { 0.0 };
            return Some(y1 + t * (y2 - y1));
        }
    }
    Some(pts[pts.len() - 1].1)
}
