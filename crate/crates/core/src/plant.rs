//! The true stochastic process of each agent and its noise sources.
//!
//! An agent evolves as `x⁺ = A x + B u + v`, `y = H x + w`. A [`LinearModel`]
//! can carry several parameter *regimes* (index 0 is nominal); the simulator
//! decides which regime is active at each step, which is how the platoon's
//! surface change is expressed.

use nalgebra::SymmetricEigen;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{dim_err, Error, Result};
use crate::numerics::{is_symmetric_psd, symmetrize, Matrix, Vector, PSD_TOL};

/// `(A, B, H, Q, R)` for one regime.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemMatrices {
    pub a: Matrix,
    pub b: Matrix,
    pub h: Matrix,
    pub q: Matrix,
    pub r: Matrix,
}

impl SystemMatrices {
    pub fn scalar(a: f64, b: f64, h: f64, q: f64, r: f64) -> Self {
        let s = |v| Matrix::from_element(1, 1, v);
        Self {
            a: s(a),
            b: s(b),
            h: s(h),
            q: s(q),
            r: s(r),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn check_dimensions(&self) -> Result<()> {
        let n = self.a.nrows();
        if self.a.ncols() != n {
            return Err(dim_err("A must be square"));
        }
        if self.b.nrows() != n {
            return Err(dim_err(format!("B must have {n} rows")));
        }
        if self.h.ncols() != n {
            return Err(dim_err(format!("H must have {n} columns")));
        }
        if self.q.shape() != (n, n) {
            return Err(dim_err(format!("Q must be {n}x{n}")));
        }
        let m = self.h.nrows();
        if self.r.shape() != (m, m) {
            return Err(dim_err(format!("R must be {m}x{m}")));
        }
        Ok(())
    }

    /// Closed-loop transition `A + B F` for the agent's own gain block.
    pub fn closed_loop(&self, own_gain: &Matrix) -> Matrix {
        &self.a + &self.b * own_gain
    }
}

/// Distribution of one noise channel.
///
/// For the process channel `Uniform` is interpreted as input noise: each input
/// component is drawn from `U[-a, a]` and enters through `B`. For the
/// measurement channel it is drawn per output component.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseLaw {
    Gaussian,
    Uniform { half_width: Vector },
}

/// Square-root factor of a PSD covariance (works for singular matrices).
fn psd_factor(cov: &Matrix) -> Matrix {
    if let Some(chol) = cov.clone().cholesky() {
        return chol.l();
    }
    let eig = SymmetricEigen::new(symmetrize(cov));
    let sqrt = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * Matrix::from_diagonal(&sqrt)
}

#[derive(Debug, Clone)]
struct RegimeNoise {
    process_factor: Matrix,
    measurement_factor: Matrix,
}

/// Per-agent model: parameter regimes, initial belief and noise laws.
#[derive(Debug, Clone)]
pub struct LinearModel {
    regimes: Vec<SystemMatrices>,
    factors: Vec<RegimeNoise>,
    pub x0_mean: Vector,
    pub x0_cov: Matrix,
    pub process_noise: NoiseLaw,
    pub measurement_noise: NoiseLaw,
}

impl LinearModel {
    /// Single-regime model with Gaussian noise.
    pub fn gaussian(sys: SystemMatrices, x0_mean: Vector, x0_cov: Matrix) -> Result<Self> {
        Self::new(
            vec![sys],
            x0_mean,
            x0_cov,
            NoiseLaw::Gaussian,
            NoiseLaw::Gaussian,
        )
    }

    pub fn new(
        regimes: Vec<SystemMatrices>,
        x0_mean: Vector,
        x0_cov: Matrix,
        process_noise: NoiseLaw,
        measurement_noise: NoiseLaw,
    ) -> Result<Self> {
        let first = regimes
            .first()
            .ok_or_else(|| Error::Config("model needs at least one regime".into()))?;
        let (n, p, m) = (first.state_dim(), first.input_dim(), first.output_dim());
        for sys in &regimes {
            sys.check_dimensions()?;
            if (sys.state_dim(), sys.input_dim(), sys.output_dim()) != (n, p, m) {
                return Err(dim_err("all regimes must share dimensions"));
            }
            if !is_symmetric_psd(&sys.q, PSD_TOL) {
                return Err(Error::Config("Q must be symmetric PSD".into()));
            }
            if !is_symmetric_psd(&sys.r, PSD_TOL) {
                return Err(Error::Config("R must be symmetric PSD".into()));
            }
        }
        if x0_mean.len() != n || x0_cov.shape() != (n, n) {
            return Err(dim_err(format!("initial belief must be {n}-dimensional")));
        }
        if !is_symmetric_psd(&x0_cov, PSD_TOL) {
            return Err(Error::Config("X0 must be symmetric PSD".into()));
        }
        if let NoiseLaw::Uniform { half_width } = &process_noise {
            if half_width.len() != p {
                return Err(dim_err("uniform process noise needs one width per input"));
            }
        }
        if let NoiseLaw::Uniform { half_width } = &measurement_noise {
            if half_width.len() != m {
                return Err(dim_err(
                    "uniform measurement noise needs one width per output",
                ));
            }
        }
        let factors = regimes
            .iter()
            .map(|sys| RegimeNoise {
                process_factor: psd_factor(&sys.q),
                measurement_factor: psd_factor(&sys.r),
            })
            .collect();
        Ok(Self {
            regimes,
            factors,
            x0_mean,
            x0_cov,
            process_noise,
            measurement_noise,
        })
    }

    pub fn regime_count(&self) -> usize {
        self.regimes.len()
    }

    /// Parameters of the given regime (clamped to the last one).
    pub fn system(&self, regime: usize) -> &SystemMatrices {
        &self.regimes[regime.min(self.regimes.len() - 1)]
    }

    pub fn nominal(&self) -> &SystemMatrices {
        &self.regimes[0]
    }

    pub fn state_dim(&self) -> usize {
        self.regimes[0].state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.regimes[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.regimes[0].output_dim()
    }

    fn factors(&self, regime: usize) -> &RegimeNoise {
        &self.factors[regime.min(self.factors.len() - 1)]
    }

    /// Draws a process-noise vector `v` for the regime.
    pub fn sample_process_noise(&self, regime: usize, noise: &mut NoiseSource) -> Vector {
        match &self.process_noise {
            NoiseLaw::Gaussian => noise.correlated_normal(&self.factors(regime).process_factor),
            NoiseLaw::Uniform { half_width } => {
                let w = noise.uniform(half_width);
                &self.system(regime).b * w
            }
        }
    }

    /// Draws a measurement-noise vector `w` for the regime.
    pub fn sample_measurement_noise(&self, regime: usize, noise: &mut NoiseSource) -> Vector {
        match &self.measurement_noise {
            NoiseLaw::Gaussian => noise.correlated_normal(&self.factors(regime).measurement_factor),
            NoiseLaw::Uniform { half_width } => noise.uniform(half_width),
        }
    }

    /// Draws `x₀ ~ N(x̄₀, X₀)`.
    pub fn sample_initial_state(&self, noise: &mut NoiseSource) -> Vector {
        &self.x0_mean + noise.correlated_normal(&psd_factor(&self.x0_cov))
    }
}

/// Covariance implied by uniform input noise entering through `B`.
pub fn uniform_input_covariance(b: &Matrix, half_width: &Vector) -> Matrix {
    let var = Matrix::from_diagonal(&half_width.map(|a| a * a / 3.0));
    symmetrize(&(b * var * b.transpose()))
}

/// Covariance of independent `U[-a, a]` components.
pub fn uniform_covariance(half_width: &Vector) -> Matrix {
    Matrix::from_diagonal(&half_width.map(|a| a * a / 3.0))
}

/// Seeded pseudo-random stream for one noise channel.
///
/// The same `(seed, stream)` pair always yields the same sample sequence.
#[derive(Debug, Clone)]
pub struct NoiseSource {
    rng: ChaCha8Rng,
}

impl NoiseSource {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng }
    }

    pub fn standard_normal(&mut self, n: usize) -> Vector {
        Vector::from_fn(n, |_, _| self.rng.sample(StandardNormal))
    }

    pub fn correlated_normal(&mut self, factor: &Matrix) -> Vector {
        let z = self.standard_normal(factor.ncols());
        factor * z
    }

    pub fn uniform(&mut self, half_width: &Vector) -> Vector {
        half_width.map(|a| {
            if a > 0.0 {
                self.rng.random_range(-a..=a)
            } else {
                0.0
            }
        })
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.rng.random::<f64>() < p
    }
}

/// `A x + B u + v` with an explicit noise sample.
pub fn propagate(x: &Vector, u: &Vector, v: &Vector, sys: &SystemMatrices) -> Result<Vector> {
    if x.len() != sys.state_dim() || u.len() != sys.input_dim() || v.len() != sys.state_dim() {
        return Err(dim_err(
            "state/input/noise dimensions do not match the model",
        ));
    }
    Ok(&sys.a * x + &sys.b * u + v)
}

/// `H x + w` with an explicit noise sample.
pub fn observe(x: &Vector, w: &Vector, sys: &SystemMatrices) -> Result<Vector> {
    if x.len() != sys.state_dim() || w.len() != sys.output_dim() {
        return Err(dim_err(
            "state/measurement dimensions do not match the model",
        ));
    }
    Ok(&sys.h * x + w)
}

/// Advances the true state one step, drawing process noise from `noise`.
pub fn step_true_state(
    x: &Vector,
    u: &Vector,
    model: &LinearModel,
    regime: usize,
    noise: &mut NoiseSource,
) -> Result<Vector> {
    let v = model.sample_process_noise(regime, noise);
    propagate(x, u, &v, model.system(regime))
}

/// Takes a noisy measurement of the true state.
pub fn measure(
    x: &Vector,
    model: &LinearModel,
    regime: usize,
    noise: &mut NoiseSource,
) -> Result<Vector> {
    let w = model.sample_measurement_noise(regime, noise);
    observe(x, &w, model.system(regime))
}

/// Road-surface change for the platoon: once the lead vehicle passes
/// `threshold` metres, positions advance `position_scale` times faster per
/// unit velocity and inputs are `input_scale` times as effective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceRule {
    pub threshold: f64,
    pub position_scale: f64,
    pub input_scale: f64,
}

impl Default for SurfaceRule {
    fn default() -> Self {
        Self {
            threshold: 200.0,
            position_scale: 1.5,
            input_scale: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlatoonConfig {
    pub vehicles: usize,
    pub dt: f64,
    pub surface: Option<SurfaceRule>,
    /// Half width of the uniform position-measurement noise [m].
    pub measurement_half_width: f64,
    /// Half width of the uniform input (acceleration) noise [m/s²].
    pub input_half_width: f64,
    pub initial_speed: f64,
    pub initial_gap: f64,
    /// Standard deviation of the initial position/velocity uncertainty.
    pub initial_std: f64,
}

impl PlatoonConfig {
    pub fn new(vehicles: usize, dt: f64) -> Self {
        Self {
            vehicles,
            dt,
            surface: None,
            measurement_half_width: 0.1,
            input_half_width: 0.1,
            initial_speed: 22.2,
            initial_gap: 10.0,
            initial_std: 0.05,
        }
    }
}

/// Platoon of point-mass vehicles.
///
/// Each agent's own state is absolute `[s_i, v_i]` and it measures `s_i`.
/// Control is designed on the relative ensemble state
/// `[v_1, Δs_1, v_2, Δs_2, …, v_N]` with `Δs_i = s_i − s_{i+1}` the gap from
/// vehicle `i` to its follower (vehicle 1 leads), so the last vehicle has no
/// gap entry. [`PlatoonModel::to_relative`] maps the stacked absolute state to
/// the relative one.
#[derive(Debug, Clone)]
pub struct PlatoonModel {
    pub agents: Vec<LinearModel>,
    /// Nominal relative ensemble dynamics used for LQR design.
    pub ensemble_a: Matrix,
    pub ensemble_b: Matrix,
    pub to_relative: Matrix,
    pub dt: f64,
    pub surface: Option<SurfaceRule>,
}

fn vehicle_matrices(dt: f64, position_scale: f64, input_scale: f64) -> (Matrix, Matrix) {
    let a = Matrix::from_row_slice(2, 2, &[1.0, position_scale * dt, 0.0, 1.0]);
    let b = Matrix::from_row_slice(
        2,
        1,
        &[
            position_scale * input_scale * dt * dt / 2.0,
            input_scale * dt,
        ],
    );
    (a, b)
}

/// Index of `v_i` in the relative ensemble state.
pub fn relative_velocity_index(i: usize) -> usize {
    2 * i
}

/// Index of `Δs_i` (gap between vehicle `i` and `i+1`) in the relative state.
pub fn relative_gap_index(i: usize) -> usize {
    2 * i + 1
}

pub fn build_platoon_model(cfg: &PlatoonConfig) -> Result<PlatoonModel> {
    let n = cfg.vehicles;
    if n < 2 {
        return Err(Error::Config(format!(
            "platoon needs at least 2 vehicles, got {n}"
        )));
    }
    if cfg.dt.is_nan() || cfg.dt <= 0.0 {
        return Err(Error::Config("platoon sample time must be positive".into()));
    }
    let dt = cfg.dt;
    let input_w = Vector::from_element(1, cfg.input_half_width);
    let meas_w = Vector::from_element(1, cfg.measurement_half_width);
    let h = Matrix::from_row_slice(1, 2, &[1.0, 0.0]);
    let r = uniform_covariance(&meas_w);

    let mut regime_params = vec![(1.0, 1.0)];
    if let Some(rule) = cfg.surface {
        regime_params.push((rule.position_scale, rule.input_scale));
    }

    let mut agents = Vec::with_capacity(n);
    for i in 0..n {
        let regimes = regime_params
            .iter()
            .map(|&(ps, is)| {
                let (a, b) = vehicle_matrices(dt, ps, is);
                let q = uniform_input_covariance(&b, &input_w);
                SystemMatrices {
                    a,
                    b,
                    h: h.clone(),
                    q,
                    r: r.clone(),
                }
            })
            .collect();
        let s0 = -(i as f64) * cfg.initial_gap;
        let x0 = Vector::from_vec(vec![s0, cfg.initial_speed]);
        let x0_cov = Matrix::identity(2, 2) * cfg.initial_std.powi(2);
        agents.push(LinearModel::new(
            regimes,
            x0,
            x0_cov,
            NoiseLaw::Uniform {
                half_width: input_w.clone(),
            },
            NoiseLaw::Uniform {
                half_width: meas_w.clone(),
            },
        )?);
    }

    let dim = 2 * n - 1;
    let mut to_relative = Matrix::zeros(dim, 2 * n);
    for i in 0..n {
        to_relative[(relative_velocity_index(i), 2 * i + 1)] = 1.0;
        if i + 1 < n {
            to_relative[(relative_gap_index(i), 2 * i)] = 1.0;
            to_relative[(relative_gap_index(i), 2 * (i + 1))] = -1.0;
        }
    }

    // Relative dynamics under the nominal regime.
    let mut ensemble_a = Matrix::identity(dim, dim);
    let mut ensemble_b = Matrix::zeros(dim, n);
    for i in 0..n {
        ensemble_b[(relative_velocity_index(i), i)] = dt;
        if i + 1 < n {
            let g = relative_gap_index(i);
            ensemble_a[(g, relative_velocity_index(i))] = dt;
            ensemble_a[(g, relative_velocity_index(i + 1))] = -dt;
            ensemble_b[(g, i)] = dt * dt / 2.0;
            ensemble_b[(g, i + 1)] = -dt * dt / 2.0;
        }
    }

    Ok(PlatoonModel {
        agents,
        ensemble_a,
        ensemble_b,
        to_relative,
        dt,
        surface: cfg.surface,
    })
}

impl PlatoonModel {
    pub fn vehicles(&self) -> usize {
        self.agents.len()
    }

    pub fn relative_dim(&self) -> usize {
        self.ensemble_a.nrows()
    }

    /// Relative reference `[v, d, v, d, …, v]`.
    pub fn relative_reference(&self, speed: f64, gap: f64) -> Vector {
        let n = self.vehicles();
        let mut r = Vector::zeros(self.relative_dim());
        for i in 0..n {
            r[relative_velocity_index(i)] = speed;
            if i + 1 < n {
                r[relative_gap_index(i)] = gap;
            }
        }
        r
    }
}
