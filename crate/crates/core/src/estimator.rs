//! Local Kalman filter, its open-loop M-step prediction, and the
//! data-independent variance quantities consumed by the triggers.

use crate::error::{dim_err, Error, Result};
use crate::numerics::{mat_pow, symmetrize, variance_step, Matrix, Vector};
use crate::plant::SystemMatrices;

/// Gaussian posterior `N(x̂_k, P_k)` at step `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: Vector,
    pub cov: Matrix,
    pub step: usize,
}

impl GaussianBelief {
    pub fn new(mean: Vector, cov: Matrix, step: usize) -> Self {
        Self { mean, cov, step }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Everything one filter step produces.
#[derive(Debug, Clone)]
pub struct KfUpdate {
    pub belief: GaussianBelief,
    pub prior_mean: Vector,
    pub prior_cov: Matrix,
    pub gain: Matrix,
    /// `z_k = y_k − H x̂_{k|k−1}`.
    pub innovation: Vector,
}

/// `V_o(P) = A P Aᵀ + Q`.
pub fn open_loop_variance(p: &Matrix, sys: &SystemMatrices) -> Result<Matrix> {
    let n = sys.state_dim();
    if p.shape() != (n, n) {
        return Err(dim_err(format!("variance must be {n}x{n}")));
    }
    Ok(symmetrize(&(&sys.a * p * sys.a.transpose() + &sys.q)))
}

/// `V_o` composed `m` times.
pub fn open_loop_variance_pow(p: &Matrix, sys: &SystemMatrices, m: usize) -> Result<Matrix> {
    let mut out = p.clone();
    for _ in 0..m {
        out = open_loop_variance(&out, sys)?;
    }
    if m == 0 {
        let n = sys.state_dim();
        if p.shape() != (n, n) {
            return Err(dim_err(format!("variance must be {n}x{n}")));
        }
    }
    Ok(out)
}

/// `P̃_k = H A P_{k−1} Aᵀ Hᵀ + H Q Hᵀ + R`, the innovation covariance.
pub fn innovation_variance(p_prev: &Matrix, sys: &SystemMatrices) -> Result<Matrix> {
    let prior = open_loop_variance(p_prev, sys)?;
    Ok(symmetrize(&(&sys.h * prior * sys.h.transpose() + &sys.r)))
}

/// One Kalman filter step from `belief` at `k−1` with input `u_{k−1}` and
/// measurement `y_k`.
pub fn kf_step_detailed(
    belief: &GaussianBelief,
    u: &Vector,
    y: &Vector,
    sys: &SystemMatrices,
) -> Result<KfUpdate> {
    if belief.dim() != sys.state_dim() || belief.cov.shape() != (sys.state_dim(), sys.state_dim()) {
        return Err(dim_err("belief does not match the model state"));
    }
    if u.len() != sys.input_dim() {
        return Err(dim_err(format!(
            "input must have length {}",
            sys.input_dim()
        )));
    }
    if y.len() != sys.output_dim() {
        return Err(dim_err(format!(
            "measurement must have length {}",
            sys.output_dim()
        )));
    }
    let prior_mean = &sys.a * &belief.mean + &sys.b * u;
    let (prior_cov, gain, posterior) = variance_step(&belief.cov, sys)?;
    let innovation = y - &sys.h * &prior_mean;
    let mean = &prior_mean + &gain * &innovation;
    Ok(KfUpdate {
        belief: GaussianBelief::new(mean, posterior, belief.step + 1),
        prior_mean,
        prior_cov,
        gain,
        innovation,
    })
}

pub fn kf_step(
    belief: &GaussianBelief,
    u: &Vector,
    y: &Vector,
    sys: &SystemMatrices,
) -> Result<GaussianBelief> {
    kf_step_detailed(belief, u, y, sys).map(|upd| upd.belief)
}

/// M-step open-loop prediction `N(x̂_{k+M|k}, P_{k+M|k})` under the control
/// law `u = F x̂ + ξ`.
///
/// The mean is `Ā^M x̂_k + Σ_{m=1}^{M} Ā^{M−m} B ξ_{k+m−1}` with `Ā = A + BF`;
/// `future_xi` holds `ξ_k … ξ_{k+M−1}` (empty means all zero).
pub fn predict_m_steps(
    belief: &GaussianBelief,
    future_xi: &[Vector],
    own_gain: &Matrix,
    sys: &SystemMatrices,
    horizon: usize,
) -> Result<GaussianBelief> {
    if !future_xi.is_empty() && future_xi.len() != horizon {
        return Err(Error::Contract(format!(
            "expected {horizon} future ξ values, got {}",
            future_xi.len()
        )));
    }
    if own_gain.shape() != (sys.input_dim(), sys.state_dim()) {
        return Err(dim_err("gain must be input_dim x state_dim"));
    }
    if horizon == 0 {
        return Ok(belief.clone());
    }
    let closed = sys.closed_loop(own_gain);
    let mut mean = belief.mean.clone();
    for m in 0..horizon {
        mean = &closed * mean;
        if let Some(xi) = future_xi.get(m) {
            if xi.len() != sys.input_dim() {
                return Err(dim_err("ξ must have input dimension"));
            }
            mean += &sys.b * xi;
        }
    }
    let cov = open_loop_variance_pow(&belief.cov, sys, horizon)?;
    Ok(GaussianBelief::new(mean, cov, belief.step + horizon))
}

/// Closed-form `Ā^M x̂ + Σ Ā^{M−m} B ξ` (used as a cross-check of the recursion).
pub fn predicted_mean_closed_form(
    mean: &Vector,
    future_xi: &[Vector],
    closed_loop: &Matrix,
    b: &Matrix,
) -> Vector {
    let horizon = future_xi.len();
    let mut out = mat_pow(closed_loop, horizon) * mean;
    for (idx, xi) in future_xi.iter().enumerate() {
        let m = idx + 1;
        out += mat_pow(closed_loop, horizon - m) * b * xi;
    }
    out
}

/// Posterior/prior variances, gains and innovation covariances of the
/// Kalman filter from a known anchor `P_start` onward.
///
/// Entry `j` describes step `start + j`. The recursion does not depend on
/// measurement data, so the schedule can be extended as far ahead as needed.
#[derive(Debug, Clone)]
pub struct VarianceSchedule {
    sys: SystemMatrices,
    start: usize,
    posterior: Vec<Matrix>,
    prior: Vec<Matrix>,
    gain: Vec<Matrix>,
    innovation: Vec<Matrix>,
}

impl VarianceSchedule {
    pub fn new(sys: SystemMatrices, start: usize, p_start: Matrix) -> Result<Self> {
        let n = sys.state_dim();
        if p_start.shape() != (n, n) {
            return Err(dim_err(format!("anchor variance must be {n}x{n}")));
        }
        Ok(Self {
            sys,
            start,
            posterior: vec![p_start],
            prior: vec![Matrix::zeros(0, 0)],
            gain: vec![Matrix::zeros(0, 0)],
            innovation: vec![Matrix::zeros(0, 0)],
        })
    }

    /// Builds a schedule covering `start ..= start + len`.
    pub fn build(sys: &SystemMatrices, start: usize, p_start: Matrix, len: usize) -> Result<Self> {
        let mut s = Self::new(sys.clone(), start, p_start)?;
        s.ensure(start + len)?;
        Ok(s)
    }

    pub fn system(&self) -> &SystemMatrices {
        &self.sys
    }

    pub fn start(&self) -> usize {
        self.start
    }

    /// Last step covered.
    pub fn end(&self) -> usize {
        self.start + self.posterior.len() - 1
    }

    /// Extends the schedule so that it covers `step`.
    pub fn ensure(&mut self, step: usize) -> Result<()> {
        while self.end() < step {
            let last = self.posterior.last().expect("schedule is never empty");
            let innovation = innovation_variance(last, &self.sys)?;
            let (prior, gain, post) = variance_step(last, &self.sys)?;
            self.prior.push(prior);
            self.gain.push(gain);
            self.innovation.push(innovation);
            self.posterior.push(post);
        }
        Ok(())
    }

    fn index(&self, step: usize, need_transition: bool) -> Result<usize> {
        let lo = if need_transition {
            self.start + 1
        } else {
            self.start
        };
        if step < lo || step > self.end() {
            return Err(Error::Contract(format!(
                "variance schedule covers {}..={}, step {step} requested",
                lo,
                self.end()
            )));
        }
        Ok(step - self.start)
    }

    /// `P_k`.
    pub fn posterior(&self, step: usize) -> Result<&Matrix> {
        Ok(&self.posterior[self.index(step, false)?])
    }

    /// `P_{k|k−1}`.
    pub fn prior(&self, step: usize) -> Result<&Matrix> {
        Ok(&self.prior[self.index(step, true)?])
    }

    /// `L_k`.
    pub fn gain(&self, step: usize) -> Result<&Matrix> {
        Ok(&self.gain[self.index(step, true)?])
    }

    /// `P̃_k`.
    pub fn innovation_cov(&self, step: usize) -> Result<&Matrix> {
        Ok(&self.innovation[self.index(step, true)?])
    }
}
