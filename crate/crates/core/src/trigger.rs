//! Trigger laws (event, predictive, self) and the conditional error
//! distributions they are derived from.

use crate::error::{dim_err, Error, Result};
use crate::estimator::{open_loop_variance, open_loop_variance_pow, VarianceSchedule};
use crate::numerics::{max_abs, Matrix, Vector};
use crate::plant::SystemMatrices;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TriggerKind {
    Et,
    Pt,
    St,
}

impl TriggerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TriggerKind::Et => "et",
            TriggerKind::Pt => "pt",
            TriggerKind::St => "st",
        }
    }
}

impl std::fmt::Display for TriggerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TriggerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "et" => Ok(TriggerKind::Et),
            "pt" => Ok(TriggerKind::Pt),
            "st" => Ok(TriggerKind::St),
            other => Err(Error::Config(format!("unknown trigger kind {other:?}"))),
        }
    }
}

/// Communication cost `C_k`.
#[derive(Debug, Clone, PartialEq)]
pub enum CostSchedule {
    Constant(f64),
    /// `C_1, C_2, …`; the last value is held beyond the end.
    Sequence(Vec<f64>),
}

impl CostSchedule {
    pub fn at(&self, step: usize) -> f64 {
        match self {
            CostSchedule::Constant(c) => *c,
            CostSchedule::Sequence(v) => {
                let idx = step.saturating_sub(1).min(v.len().saturating_sub(1));
                v.get(idx).copied().unwrap_or(f64::INFINITY)
            }
        }
    }
}

/// Per-agent record of trigger decisions `γ_k`.
///
/// Step 0 is the initial belief; a trigger at step 0 never exists, so
/// "no trigger yet" reads as `ℓ = κ = 0`.
#[derive(Debug, Clone)]
pub struct TriggerBook {
    horizon: usize,
    gamma: Vec<bool>,
    decided_at: Vec<Option<usize>>,
    fired: Vec<usize>,
}

impl TriggerBook {
    pub fn new(horizon: usize) -> Self {
        Self {
            horizon,
            gamma: vec![false],
            decided_at: vec![None],
            fired: Vec::new(),
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Records `γ_step`. `decided_at` is the step at which the decision was
    /// taken, or `None` for configured decisions such as the forced first
    /// trigger.
    pub fn record(&mut self, step: usize, gamma: bool, decided_at: Option<usize>) -> Result<()> {
        if step == 0 {
            return Err(Error::Contract("decisions start at step 1".into()));
        }
        if gamma {
            if let Some(&last) = self.fired.last() {
                if step <= last {
                    return Err(Error::Invariant(format!(
                        "trigger at {step} recorded after a later one at {last}"
                    )));
                }
            }
            self.fired.push(step);
        }
        if self.gamma.len() <= step {
            self.gamma.resize(step + 1, false);
            self.decided_at.resize(step + 1, None);
        }
        self.gamma[step] = gamma;
        self.decided_at[step] = decided_at;
        Ok(())
    }

    pub fn gamma(&self, step: usize) -> bool {
        self.gamma.get(step).copied().unwrap_or(false)
    }

    /// When `γ_step = 1` was decided (`None` if configured or not a trigger).
    pub fn decided_at(&self, step: usize) -> Option<usize> {
        self.decided_at.get(step).copied().flatten()
    }

    /// `ℓ_k`: last trigger at or before `k`.
    pub fn last_fired(&self, k: usize) -> usize {
        let idx = self.fired.partition_point(|&s| s <= k);
        if idx == 0 {
            0
        } else {
            self.fired[idx - 1]
        }
    }

    /// `κ`: last trigger recorded so far, including planned ones.
    pub fn last_scheduled(&self) -> usize {
        self.fired.last().copied().unwrap_or(0)
    }

    /// All trigger steps in increasing order.
    pub fn triggers(&self) -> &[usize] {
        &self.fired
    }
}

/// Mean and covariance of the predicted remote error, with (`c`) or without
/// (`nc`) a communication at the target step.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorDistribution {
    pub mean: Vector,
    pub cov: Matrix,
    pub communicated: bool,
}

/// `G_0 … G_m` for one agent, extended on demand.
///
/// `G_0 = BF`, `G_m = A G_{m−1} + B F Ā^m`.
#[derive(Debug, Clone)]
pub struct GSequence {
    a: Matrix,
    bf: Matrix,
    closed: Matrix,
    closed_pow: Matrix,
    terms: Vec<Matrix>,
    zero: bool,
}

impl GSequence {
    pub fn new(sys: &SystemMatrices, own_gain: &Matrix) -> Result<Self> {
        if own_gain.shape() != (sys.input_dim(), sys.state_dim()) {
            return Err(dim_err("gain must be input_dim x state_dim"));
        }
        let bf = &sys.b * own_gain;
        let zero = max_abs(&bf) == 0.0;
        let n = sys.state_dim();
        Ok(Self {
            a: sys.a.clone(),
            closed: &sys.a + &bf,
            closed_pow: Matrix::identity(n, n),
            terms: vec![bf.clone()],
            bf,
            zero,
        })
    }

    /// True when every `G_m` vanishes (`B = 0` or `F = 0`).
    pub fn is_zero(&self) -> bool {
        self.zero
    }

    pub fn ensure(&mut self, m: usize) {
        while self.terms.len() <= m {
            self.closed_pow = &self.closed_pow * &self.closed;
            let last = self.terms.last().expect("G_0 always present");
            let next = &self.a * last + &self.bf * &self.closed_pow;
            self.terms.push(next);
        }
    }

    pub fn get(&mut self, m: usize) -> &Matrix {
        self.ensure(m);
        &self.terms[m]
    }

    pub fn terms(&self) -> &[Matrix] {
        &self.terms
    }
}

pub fn g_sequence(sys: &SystemMatrices, own_gain: &Matrix, m_max: usize) -> Result<Vec<Matrix>> {
    let mut g = GSequence::new(sys, own_gain)?;
    g.ensure(m_max);
    Ok(g.terms[..=m_max].to_vec())
}

/// Extra covariance of the remote error over `P_{k+M|k}` caused by the
/// feedback of future innovations, with `W_m = L_{k+m} P̃_{k+m} L_{k+m}ᵀ`
/// and `j = M − m`:
///
/// `Ξ_{k,M} = Σ_{m=1}^{M−1} Ā^j W_m Ā^jᵀ − A^j W_m A^jᵀ`
///
/// written through `G_{j−1} = Ā^j − A^j` as
/// `G W Gᵀ + G W A^jᵀ + A^j W Gᵀ`. The cross terms matter: the prediction
/// `x̂_{k+M|k}` and its error are correlated in closed loop, so dropping
/// them misstates the spread as soon as `M ≥ 2`. Can be indefinite.
pub fn xi_term(
    k: usize,
    horizon: usize,
    schedule: &VarianceSchedule,
    g: &[Matrix],
) -> Result<Matrix> {
    let n = schedule.system().state_dim();
    let mut out = Matrix::zeros(n, n);
    if horizon <= 1 {
        return Ok(out);
    }
    if g.len() < horizon - 1 {
        return Err(Error::Contract(format!(
            "Ξ over horizon {horizon} needs G_0..G_{}, got {} terms",
            horizon - 2,
            g.len()
        )));
    }
    if schedule.end() < k + horizon - 1 {
        return Err(Error::Contract(format!(
            "variance schedule ends at {}, Ξ needs step {}",
            schedule.end(),
            k + horizon - 1
        )));
    }
    if g[..horizon - 1].iter().all(|gm| max_abs(gm) == 0.0) {
        return Ok(out);
    }
    let a = &schedule.system().a;
    // A^j for j = 1..M−1, innermost term first.
    let mut a_pow = a.clone();
    for m in (1..horizon).rev() {
        let j = horizon - m;
        if j > 1 {
            a_pow = a * &a_pow;
        }
        let gm = &g[j - 1];
        let l = schedule.gain(k + m)?;
        let w = l * schedule.innovation_cov(k + m)? * l.transpose();
        let gw = gm * &w;
        let cross = &gw * a_pow.transpose();
        out += &gw * gm.transpose() + &cross + cross.transpose();
    }
    Ok((&out + out.transpose()) * 0.5)
}

/// Error law when `γ_{k+M} = 1`: `N(0, P_{k+M})`.
pub fn error_dist_communicated(
    k: usize,
    horizon: usize,
    schedule: &VarianceSchedule,
) -> Result<ErrorDistribution> {
    let cov = schedule.posterior(k + horizon)?.clone();
    Ok(ErrorDistribution {
        mean: Vector::zeros(cov.nrows()),
        cov,
        communicated: true,
    })
}

/// Data the predictive trigger needs at step `k`.
#[derive(Debug, Clone, Copy)]
pub struct TriggerInputs<'a> {
    /// `x̂_k`.
    pub x_hat: &'a Vector,
    /// `x̌_{k−1}`.
    pub x_check_prev: &'a Vector,
    /// `ξ_{k−1}`.
    pub xi_prev: &'a Vector,
    /// `Ā = A + BF`.
    pub closed_loop: &'a Matrix,
    pub b: &'a Matrix,
}

impl TriggerInputs<'_> {
    /// `x̂_k − Ā x̌_{k−1} − B ξ_{k−1}`.
    pub fn mean_gap(&self) -> Result<Vector> {
        let n = self.x_hat.len();
        if self.x_check_prev.len() != n
            || self.closed_loop.shape() != (n, n)
            || self.b.nrows() != n
            || self.xi_prev.len() != self.b.ncols()
        {
            return Err(dim_err("trigger inputs do not agree in dimension"));
        }
        Ok(self.x_hat - self.closed_loop * self.x_check_prev - self.b * self.xi_prev)
    }
}

/// Which branch of the no-communication error law applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PtCase {
    /// No trigger planned within the horizon (`k > κ_{k−1}`).
    Unplanned,
    /// A trigger is planned at `κ ≥ k`; the error is reset there and
    /// propagates `Δ = k + M − κ` more steps.
    Planned { kappa: usize, delta: usize },
}

/// Error law when `γ_{k+M} = 0`, given the book through `k−1`.
///
/// `schedule` must be anchored at `k` (its start carries `P_k`) and cover
/// `k + M`.
pub fn error_dist_not_communicated(
    book: &TriggerBook,
    k: usize,
    inputs: &TriggerInputs<'_>,
    schedule: &VarianceSchedule,
    g: &[Matrix],
) -> Result<(ErrorDistribution, PtCase)> {
    let horizon = book.horizon();
    if schedule.start() != k {
        return Err(Error::Contract(format!(
            "schedule anchored at {} but decision taken at {k}",
            schedule.start()
        )));
    }
    let kappa = book.last_scheduled();
    if kappa < book.last_fired(k.saturating_sub(1)) {
        return Err(Error::Invariant("κ precedes ℓ".into()));
    }
    let sys = schedule.system();
    if k > kappa {
        let gap = inputs.mean_gap()?;
        let mut mean = gap;
        for _ in 0..horizon {
            mean = inputs.closed_loop * mean;
        }
        let pred = open_loop_variance_pow(schedule.posterior(k)?, sys, horizon)?;
        let cov = pred + xi_term(k, horizon, schedule, g)?;
        return Ok((
            ErrorDistribution {
                mean,
                cov,
                communicated: false,
            },
            PtCase::Unplanned,
        ));
    }
    let delta = k + horizon - kappa;
    let delta_ok = if horizon == 0 {
        delta == 0
    } else {
        (1..=horizon).contains(&delta)
    };
    if !delta_ok {
        return Err(Error::Invariant(format!(
            "Δ = {delta} outside [1, {horizon}] (k = {k}, κ = {kappa})"
        )));
    }
    Ok((
        planned_law(kappa, delta, schedule, g)?,
        PtCase::Planned { kappa, delta },
    ))
}

/// Zero-mean law after a reset at `κ`, `Δ` steps on.
fn planned_law(
    kappa: usize,
    delta: usize,
    schedule: &VarianceSchedule,
    g: &[Matrix],
) -> Result<ErrorDistribution> {
    let pred = open_loop_variance_pow(schedule.posterior(kappa)?, schedule.system(), delta)?;
    let cov = pred + xi_term(kappa, delta, schedule, g)?;
    Ok(ErrorDistribution {
        mean: Vector::zeros(cov.nrows()),
        cov,
        communicated: false,
    })
}

/// `Ē = ‖ê^nc‖² − ‖ê^c‖² + tr(P^nc − P^c)`.
pub fn expected_estimation_cost(nc: &ErrorDistribution, c: &ErrorDistribution) -> f64 {
    nc.mean.norm_squared() - c.mean.norm_squared() + (&nc.cov - &c.cov).trace()
}

/// Trigger signal with its data-driven ("mean") and variance parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriggerSignal {
    pub e_bar: f64,
    pub e_mean: f64,
    pub e_var: f64,
}

impl TriggerSignal {
    fn new(e_mean: f64, e_var: f64) -> Self {
        Self {
            e_bar: e_mean + e_var,
            e_mean,
            e_var,
        }
    }
}

/// Predictive-trigger evaluation for `γ_{k+M}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PtEvaluation {
    pub signal: TriggerSignal,
    pub case: PtCase,
}

pub fn pt_evaluate(
    book: &TriggerBook,
    k: usize,
    inputs: &TriggerInputs<'_>,
    schedule: &VarianceSchedule,
    g: &[Matrix],
) -> Result<PtEvaluation> {
    let horizon = book.horizon();
    let (nc, case) = error_dist_not_communicated(book, k, inputs, schedule, g)?;
    let target = match case {
        PtCase::Unplanned => k + horizon,
        PtCase::Planned { kappa, delta } => kappa + delta,
    };
    let p_c = schedule.posterior(target)?;
    let e_var = (&nc.cov - p_c).trace();
    let e_mean = nc.mean.norm_squared();
    Ok(PtEvaluation {
        signal: TriggerSignal::new(e_mean, e_var),
        case,
    })
}

/// `γ_{k+M} = 1 ⟺ Ē ≥ C_{k+M}` (ties trigger).
pub fn pt_decide(
    book: &TriggerBook,
    k: usize,
    inputs: &TriggerInputs<'_>,
    schedule: &VarianceSchedule,
    g: &[Matrix],
    cost: &CostSchedule,
) -> Result<(bool, PtEvaluation)> {
    let eval = pt_evaluate(book, k, inputs, schedule, g)?;
    let target = match eval.case {
        PtCase::Unplanned => k + book.horizon(),
        PtCase::Planned { kappa, delta } => kappa + delta,
    };
    Ok((eval.signal.e_bar >= cost.at(target), eval))
}

/// Decision for a slot `target ≤ M` that no step reaches with the full
/// lookahead. The last recorded trigger precedes it, so only the variance
/// part applies and the decision can be taken before the run starts.
/// `schedule` must cover `κ` through `target`.
pub fn pt_startup_decide(
    book: &TriggerBook,
    target: usize,
    schedule: &VarianceSchedule,
    g: &[Matrix],
    cost: &CostSchedule,
) -> Result<(bool, PtEvaluation)> {
    let kappa = book.last_scheduled();
    if kappa == 0 || target <= kappa || target > kappa + book.horizon() {
        return Err(Error::Contract(format!(
            "start-up slot {target} must lie in ({kappa}, {}]",
            kappa + book.horizon()
        )));
    }
    let delta = target - kappa;
    let nc = planned_law(kappa, delta, schedule, g)?;
    let e_var = (&nc.cov - schedule.posterior(target)?).trace();
    let eval = PtEvaluation {
        signal: TriggerSignal::new(0.0, e_var),
        case: PtCase::Planned { kappa, delta },
    };
    Ok((e_var >= cost.at(target), eval))
}

/// Event trigger: `γ_k = 1 ⟺ ‖x̂_k − Ā x̌_{k−1} − B ξ_{k−1}‖² ≥ C_k`.
pub fn et_decide(inputs: &TriggerInputs<'_>, cost: f64) -> Result<(bool, TriggerSignal)> {
    let e_mean = inputs.mean_gap()?.norm_squared();
    let signal = TriggerSignal::new(e_mean, 0.0);
    Ok((signal.e_bar >= cost, signal))
}

/// `(Ē_mean, Ē_var)` of a predictive-trigger evaluation.
pub fn signal_decomposition(eval: &PtEvaluation) -> (f64, f64) {
    (eval.signal.e_mean, eval.signal.e_var)
}

/// Self-trigger signal `tr(P_{ℓ+M|ℓ} + Ξ_{ℓ,M} − P_{ℓ+M})` (its mean part is
/// always zero).
pub fn st_signal(
    last: usize,
    horizon: usize,
    schedule: &mut VarianceSchedule,
    g: &mut GSequence,
) -> Result<TriggerSignal> {
    schedule.ensure(last + horizon)?;
    let e_var = if g.is_zero() {
        let pred = open_loop_variance_pow(schedule.posterior(last)?, schedule.system(), horizon)?;
        (pred - schedule.posterior(last + horizon)?).trace()
    } else {
        let mut spread = FeedbackSpread::new(schedule.system().state_dim());
        for m in 1..=horizon {
            spread.push(&g.closed, schedule, last + m)?;
        }
        spread.t.trace()
    };
    Ok(TriggerSignal::new(0.0, e_var))
}

/// `T_M = Ā T_{M−1} Āᵀ + L P̃ Lᵀ`, which equals
/// `P_{ℓ+M|ℓ} + Ξ_{ℓ,M} − P_{ℓ+M}` and costs one step per horizon.
struct FeedbackSpread {
    t: Matrix,
}

impl FeedbackSpread {
    fn new(n: usize) -> Self {
        Self {
            t: Matrix::zeros(n, n),
        }
    }

    fn push(&mut self, closed: &Matrix, schedule: &VarianceSchedule, step: usize) -> Result<()> {
        let l = schedule.gain(step)?;
        let w = l * schedule.innovation_cov(step)? * l.transpose();
        let next = closed * &self.t * closed.transpose() + w;
        self.t = (&next + next.transpose()) * 0.5;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StOutcome {
    /// Next trigger `M` steps after `ℓ`.
    Interval(usize),
    /// No `M ≤ m_cap` reaches the cost.
    CapExceeded,
}

/// Smallest `M ≥ 1` with `tr(P_{ℓ+M|ℓ} + Ξ_{ℓ,M} − P_{ℓ+M}) ≥ C_{ℓ+M}`.
///
/// `schedule` must be anchored at `ℓ`; it is extended as needed.
pub fn st_next_trigger(
    last: usize,
    schedule: &mut VarianceSchedule,
    g: &mut GSequence,
    cost: &CostSchedule,
    m_cap: usize,
) -> Result<StOutcome> {
    if m_cap == 0 {
        return Err(Error::Contract("ST horizon cap must be at least 1".into()));
    }
    if schedule.start() != last {
        return Err(Error::Contract(format!(
            "schedule anchored at {} but last trigger is {last}",
            schedule.start()
        )));
    }
    let mut pred = schedule.posterior(last)?.clone();
    let mut spread = FeedbackSpread::new(pred.nrows());
    for m in 1..=m_cap {
        schedule.ensure(last + m)?;
        let var = if g.is_zero() {
            pred = open_loop_variance(&pred, schedule.system())?;
            (&pred - schedule.posterior(last + m)?).trace()
        } else {
            spread.push(&g.closed, schedule, last + m)?;
            spread.t.trace()
        };
        if var >= cost.at(last + m) {
            return Ok(StOutcome::Interval(m));
        }
    }
    Ok(StOutcome::CapExceeded)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::steady_state_posterior_variance;
    use approx::assert_relative_eq;

    fn s(v: f64) -> Matrix {
        Matrix::from_element(1, 1, v)
    }

    fn v(x: f64) -> Vector {
        Vector::from_element(1, x)
    }

    fn ex1() -> SystemMatrices {
        SystemMatrices::scalar(0.98, 0.0, 1.0, 0.1, 0.1)
    }

    fn pbar() -> f64 {
        steady_state_posterior_variance(&ex1()).unwrap()[(0, 0)]
    }

    fn steady_schedule(sys: &SystemMatrices, k: usize, len: usize) -> VarianceSchedule {
        let p = steady_state_posterior_variance(sys).unwrap();
        VarianceSchedule::build(sys, k, p, len).unwrap()
    }

    #[test]
    fn book_tracks_last_and_planned() {
        // Γ = {…, γ8 = 1, γ9 = 1, γ10 = 0}, k = 6, M = 4 → κ6 = 9.
        let mut book = TriggerBook::new(4);
        book.record(3, true, Some(1)).unwrap();
        book.record(8, true, Some(4)).unwrap();
        book.record(9, true, Some(5)).unwrap();
        book.record(10, false, Some(6)).unwrap();
        assert_eq!(book.last_scheduled(), 9);
        assert_eq!(book.last_fired(6), 3);
        assert_eq!(book.last_fired(8), 8);
        assert_eq!(book.last_fired(2), 0);
        assert!(book.gamma(8) && !book.gamma(10) && !book.gamma(7));
        assert_eq!(book.decided_at(9), Some(5));
        assert!(matches!(
            book.record(5, true, None),
            Err(Error::Invariant(_))
        ));
        assert!(book.record(0, false, None).is_err());
    }

    #[test]
    fn g_sequence_values() {
        let sys = SystemMatrices::scalar(0.98, 1.0, 1.0, 0.1, 0.1);
        let g = g_sequence(&sys, &s(-0.5), 3).unwrap();
        assert_eq!(g.len(), 4);
        assert_eq!(g[0][(0, 0)], -0.5);
        assert_relative_eq!(g[1][(0, 0)], -0.73, epsilon = 1e-15);
        // Oracle: G_m = A G_{m−1} + B F Ā^m, scalar.
        let mut gm = -0.5;
        for (m, term) in g.iter().enumerate().skip(1) {
            gm = 0.98 * gm - 0.5 * 0.48f64.powi(m as i32);
            assert_relative_eq!(term[(0, 0)], gm, epsilon = 1e-14);
        }
        assert!(g_sequence(&sys, &s(0.0), 5)
            .unwrap()
            .iter()
            .all(|m| m[(0, 0)] == 0.0));
        assert!(g_sequence(&ex1(), &s(-0.5), 5)
            .unwrap()
            .iter()
            .all(|m| m[(0, 0)] == 0.0));
    }

    #[test]
    fn xi_term_cases() {
        let sys = SystemMatrices::scalar(0.98, 1.0, 1.0, 0.1, 0.1);
        let sched = steady_schedule(&sys, 0, 5);
        let g = g_sequence(&sys, &s(-0.5), 5).unwrap();
        assert_eq!(xi_term(0, 1, &sched, &g).unwrap()[(0, 0)], 0.0);
        assert_eq!(xi_term(0, 0, &sched, &g).unwrap()[(0, 0)], 0.0);
        let l = sched.gain(1).unwrap()[(0, 0)];
        let pt = sched.innovation_cov(1).unwrap()[(0, 0)];
        let xi2 = xi_term(0, 2, &sched, &g).unwrap()[(0, 0)];
        let w = l * l * pt;
        assert_relative_eq!(
            xi2,
            (0.48f64.powi(2) - 0.98f64.powi(2)) * w,
            epsilon = 1e-14
        );
        // M = 3 adds the m = 1 term two steps out.
        let xi3 = xi_term(0, 3, &sched, &g).unwrap()[(0, 0)];
        let two = 0.48f64.powi(4) - 0.98f64.powi(4);
        assert_relative_eq!(xi3, xi2 + two * w, epsilon = 1e-12);
        assert!(matches!(xi_term(0, 7, &sched, &g), Err(Error::Contract(_))));

        let b0 = steady_schedule(&ex1(), 0, 5);
        let g0 = g_sequence(&ex1(), &s(-0.5), 5).unwrap();
        assert_eq!(xi_term(0, 4, &b0, &g0).unwrap()[(0, 0)], 0.0);
    }

    fn inputs<'a>(
        x_hat: &'a Vector,
        x_prev: &'a Vector,
        xi: &'a Vector,
        a: &'a Matrix,
        b: &'a Matrix,
    ) -> TriggerInputs<'a> {
        TriggerInputs {
            x_hat,
            x_check_prev: x_prev,
            xi_prev: xi,
            closed_loop: a,
            b,
        }
    }

    #[test]
    fn distributions_example1() {
        let sys = ex1();
        let sched = steady_schedule(&sys, 5, 2);
        let g = g_sequence(&sys, &s(0.0), 2).unwrap();
        let book = TriggerBook::new(2);
        let (xh, xp, xi, a, b) = (v(1.1), v(1.0), v(0.0), s(0.98), s(0.0));
        let inp = inputs(&xh, &xp, &xi, &a, &b);
        let (nc, case) = error_dist_not_communicated(&book, 5, &inp, &sched, &g).unwrap();
        assert_eq!(case, PtCase::Unplanned);
        assert_relative_eq!(nc.mean[0], 0.9604 * (1.1 - 0.98), epsilon = 1e-14);
        assert_relative_eq!(nc.mean[0], 0.115248, epsilon = 1e-6);
        let two = open_loop_variance_pow(sched.posterior(5).unwrap(), &sys, 2).unwrap();
        assert_eq!(nc.cov, two);
        assert_relative_eq!(nc.cov[(0, 0)], 0.252664, epsilon = 2e-5);

        let c = error_dist_communicated(5, 2, &sched).unwrap();
        assert_eq!(c.mean[0], 0.0);
        assert_relative_eq!(c.cov[(0, 0)], pbar(), epsilon = 1e-12);

        let cost = expected_estimation_cost(&nc, &c);
        let oracle = nc.mean[0].powi(2) + two[(0, 0)] - pbar();
        assert_relative_eq!(cost, oracle, epsilon = 1e-12);
        assert_relative_eq!(cost, 0.204554, epsilon = 2e-5);
        assert_eq!(expected_estimation_cost(&c, &c), 0.0);
    }

    #[test]
    fn planned_case_has_zero_mean() {
        let sys = ex1();
        let sched = steady_schedule(&sys, 5, 2);
        let g = g_sequence(&sys, &s(0.0), 2).unwrap();
        let mut book = TriggerBook::new(2);
        book.record(6, true, Some(4)).unwrap();
        let (xh, xp, xi, a, b) = (v(3.0), v(-1.0), v(0.0), s(0.98), s(0.0));
        let inp = inputs(&xh, &xp, &xi, &a, &b);
        let (nc, case) = error_dist_not_communicated(&book, 5, &inp, &sched, &g).unwrap();
        assert_eq!(case, PtCase::Planned { kappa: 6, delta: 1 });
        assert_eq!(nc.mean[0], 0.0);
        let once = open_loop_variance(sched.posterior(6).unwrap(), &sys).unwrap();
        assert_eq!(nc.cov, once);

        let eval = pt_evaluate(&book, 5, &inp, &sched, &g).unwrap();
        assert_eq!(eval.signal.e_mean, 0.0);
        assert_eq!(eval.signal.e_bar, eval.signal.e_var);

        // κ beyond k + M − 1 breaks the bookkeeping.
        let mut bad = TriggerBook::new(2);
        bad.record(7, true, None).unwrap();
        assert!(matches!(
            error_dist_not_communicated(&bad, 5, &inp, &sched, &g),
            Err(Error::Invariant(_))
        ));
    }

    #[test]
    fn pt_decisions() {
        let sys = ex1();
        let sched = steady_schedule(&sys, 5, 2);
        let g = g_sequence(&sys, &s(0.0), 2).unwrap();
        let book = TriggerBook::new(2);
        let cost = CostSchedule::Constant(0.6);
        let (xp, xi, a, b) = (v(1.0), v(0.0), s(0.98), s(0.0));
        let xh = v(0.98 + 0.7);
        let inp = inputs(&xh, &xp, &xi, &a, &b);
        let (gamma, eval) = pt_decide(&book, 5, &inp, &sched, &g, &cost).unwrap();
        let var = open_loop_variance_pow(&s(pbar()), &sys, 2).unwrap()[(0, 0)] - pbar();
        assert!(gamma);
        assert_relative_eq!(
            eval.signal.e_bar,
            (0.9604f64 * 0.7).powi(2) + var,
            epsilon = 1e-12
        );
        assert_relative_eq!(eval.signal.e_bar, 0.643, epsilon = 1e-3);
        let (m, vv) = signal_decomposition(&eval);
        assert_relative_eq!(m, 0.45196, epsilon = 1e-5);
        assert_relative_eq!(vv, 0.191272, epsilon = 2e-5);

        let xh = v(0.98);
        let inp = inputs(&xh, &xp, &xi, &a, &b);
        let (gamma, eval) = pt_decide(&book, 5, &inp, &sched, &g, &cost).unwrap();
        assert!(!gamma);
        assert_relative_eq!(eval.signal.e_bar, 0.191, epsilon = 1e-3);
    }

    #[test]
    fn et_and_pt_horizon_zero_agree() {
        let sys = ex1();
        let sched = steady_schedule(&sys, 5, 0);
        let g = g_sequence(&sys, &s(0.0), 0).unwrap();
        let book = TriggerBook::new(0);
        let (xp, xi, a, b) = (v(1.0), v(0.0), s(0.98), s(0.0));
        for d in [-1.0, 0.0, 0.3, 0.8, 0.774_596_669_241_483_4] {
            let xh = v(0.98 + d);
            let inp = inputs(&xh, &xp, &xi, &a, &b);
            let (et, sig) = et_decide(&inp, 0.6).unwrap();
            let (pt, eval) =
                pt_decide(&book, 5, &inp, &sched, &g, &CostSchedule::Constant(0.6)).unwrap();
            assert_eq!(et, pt);
            assert_eq!(sig.e_bar, eval.signal.e_bar);
        }
        let xh = v(0.98 + 0.8);
        let (gamma, sig) = et_decide(&inputs(&xh, &xp, &xi, &a, &b), 0.6).unwrap();
        assert!(gamma);
        assert_relative_eq!(sig.e_bar, 0.64, epsilon = 1e-12);
        let xh = v(0.98);
        assert!(!et_decide(&inputs(&xh, &xp, &xi, &a, &b), 1e-12).unwrap().0);
    }

    #[test]
    fn et_ties_trigger() {
        let (xh, xp, xi, a, b) = (v(1.5), v(1.0), v(0.0), s(1.0), s(0.0));
        let (gamma, sig) = et_decide(&inputs(&xh, &xp, &xi, &a, &b), 0.25).unwrap();
        assert_eq!(sig.e_bar, 0.25);
        assert!(gamma);
    }

    #[test]
    fn st_example1_period_seven() {
        let sys = ex1();
        let mut sched = steady_schedule(&sys, 0, 0);
        let mut g = GSequence::new(&sys, &s(0.0)).unwrap();
        let out = st_next_trigger(0, &mut sched, &mut g, &CostSchedule::Constant(0.6), 1000);
        assert_eq!(out.unwrap(), StOutcome::Interval(7));
        // Oracle: iterate the scalar affine map.
        let p = pbar();
        let mut x = p;
        let mut diffs = vec![];
        for _ in 0..7 {
            x = 0.9604 * x + 0.1;
            diffs.push(x - p);
        }
        assert!(diffs[6] >= 0.6 && diffs[5] < 0.6);
        let sig = st_signal(0, 7, &mut sched, &mut g).unwrap();
        assert_relative_eq!(sig.e_var, diffs[6], epsilon = 1e-12);
        assert_eq!(sig.e_mean, 0.0);

        let mut sched = steady_schedule(&sys, 0, 0);
        let out = st_next_trigger(0, &mut sched, &mut g, &CostSchedule::Constant(0.0), 10);
        assert_eq!(out.unwrap(), StOutcome::Interval(1));
        let out = st_next_trigger(0, &mut sched, &mut g, &CostSchedule::Constant(1e9), 1000);
        assert_eq!(out.unwrap(), StOutcome::CapExceeded);
    }

    #[test]
    fn st_signal_with_feedback_matches_xi() {
        let sys = SystemMatrices::scalar(0.98, 1.0, 1.0, 0.1, 0.1);
        let f = s(-0.5);
        let mut sched = steady_schedule(&sys, 3, 9);
        let mut g = GSequence::new(&sys, &f).unwrap();
        g.ensure(9);
        for m in 1..=9 {
            let pred = open_loop_variance_pow(sched.posterior(3).unwrap(), &sys, m).unwrap();
            let xi = xi_term(3, m, &sched, g.terms()).unwrap();
            let want = (pred + xi - sched.posterior(3 + m).unwrap()).trace();
            let got = st_signal(3, m, &mut sched, &mut g).unwrap().e_var;
            assert_relative_eq!(got, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn cost_schedule_lookup() {
        let c = CostSchedule::Sequence(vec![1.0, 2.0, 3.0]);
        assert_eq!(c.at(1), 1.0);
        assert_eq!(c.at(3), 3.0);
        assert_eq!(c.at(50), 3.0);
        assert_eq!(CostSchedule::Constant(0.5).at(9), 0.5);
    }
}
