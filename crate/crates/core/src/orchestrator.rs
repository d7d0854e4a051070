//! The synchronous multi-agent simulation loop and Monte Carlo sweeps.
//!
//! Per step `k`: plant, measurements, local filters, trigger decisions,
//! broadcast, remote predictor updates, control inputs for the next step.

use rayon::prelude::*;

use crate::control::{assemble_closed_loop, ClosedLoop};
use crate::error::{Error, Result};
use crate::estimator::{kf_step, GaussianBelief, VarianceSchedule};
use crate::network_sim::broadcast;
use crate::numerics::{Matrix, Vector};
use crate::plant::{measure, propagate, NoiseSource, SystemMatrices};
use crate::scenarios::{Scenario, Tracking};
use crate::trigger::{
    et_decide, pt_decide, pt_startup_decide, st_next_trigger, st_signal, CostSchedule, GSequence,
    StOutcome, TriggerBook, TriggerInputs, TriggerKind, TriggerSignal,
};

const STREAM_INIT: u64 = 0;
const STREAM_PROCESS: u64 = 1;
const STREAM_MEASURE: u64 = 2;
const STREAM_DROPS: u64 = 3;

/// What one agent holds at run time.
#[derive(Debug, Clone)]
pub struct AgentRuntime {
    pub id: usize,
    pub belief: GaussianBelief,
    /// This agent's copies `x̌` of every agent, stacked (its own block is the
    /// self-copy used for triggering).
    pub views: Vector,
    pub book: TriggerBook,
    /// `ξ_{k−1}` as computed from this agent's own copies.
    pub xi_prev: Vector,
    pub u_prev: Vector,
    /// Whether this agent's predictors use the changed reference.
    pub informed: bool,
    g_cache: Vec<Option<GSequence>>,
    /// Variance lookahead and `G` terms anchored at the last self-trigger.
    st_state: Option<(VarianceSchedule, GSequence)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentRecord {
    pub x_true: Vector,
    pub x_hat: Vector,
    /// Self-copy of the remote estimate after this step's resets.
    pub x_check: Vector,
    /// Input applied from this step to the next.
    pub u: Vector,
    /// Process noise that entered this step's state.
    pub v: Vector,
    pub gamma: bool,
    pub signal: Option<TriggerSignal>,
    pub ell: usize,
    pub kappa: usize,
    /// `‖x − x̌‖²`.
    pub e: f64,
    /// `‖x − x̂‖²`.
    pub e_hat: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    pub regime: usize,
    pub agents: Vec<AgentRecord>,
}

impl StepRecord {
    /// Stacked true state.
    pub fn stacked_true(&self) -> Vector {
        stack(self.agents.iter().map(|a| &a.x_true))
    }
}

fn stack<'a>(parts: impl Iterator<Item = &'a Vector>) -> Vector {
    let parts: Vec<&Vector> = parts.collect();
    let n = parts.iter().map(|p| p.len()).sum();
    let mut out = Vector::zeros(n);
    let mut r = 0;
    for p in parts {
        out.rows_mut(r, p.len()).copy_from(p);
        r += p.len();
    }
    out
}

/// Per-run aggregates over steps `1..=horizon` and all agents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunStats {
    pub steps: usize,
    pub agents: usize,
    /// Fraction of (step, agent) slots with `γ = 1`.
    pub comm: f64,
    /// Mean `‖e_k‖²`.
    pub err: f64,
    /// Mean `‖ê_k‖²`.
    pub err_hat: f64,
    /// Normalized L1 tracking error, for tracking scenarios.
    pub tracking: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SimTrace {
    pub scenario: String,
    pub kind: TriggerKind,
    pub seed: u64,
    /// State at `k = 0` (before any measurement).
    pub initial: StepRecord,
    /// Steps `1..=horizon`; empty when records were not kept.
    pub records: Vec<StepRecord>,
    pub books: Vec<TriggerBook>,
    pub stats: RunStats,
}

impl SimTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Per-agent decision sequences `γ_1 … γ_T`.
    pub fn decisions(&self, agent: usize) -> Vec<bool> {
        (1..=self.stats.steps)
            .map(|k| self.books[agent].gamma(k))
            .collect()
    }
}

/// Regime-dependent matrices shared by all agents.
struct RegimeData {
    systems: Vec<SystemMatrices>,
    closed_own: Vec<Matrix>,
    ensemble: ClosedLoop,
    /// `B̃ c̃` before and after the reference change.
    offset_drive: [Vector; 2],
}

struct Layout {
    offsets: Vec<usize>,
    dims: Vec<usize>,
}

impl Layout {
    fn block<'a>(&self, v: &'a Vector, j: usize) -> nalgebra::DVectorView<'a, f64> {
        v.rows(self.offsets[j], self.dims[j])
    }
}

fn regime_data(scenario: &Scenario, regime: usize) -> Result<RegimeData> {
    let systems: Vec<SystemMatrices> = scenario
        .agents
        .iter()
        .map(|m| m.system(regime).clone())
        .collect();
    let refs: Vec<&SystemMatrices> = systems.iter().collect();
    let ensemble = assemble_closed_loop(&refs, &scenario.law)?;
    let closed_own = systems
        .iter()
        .enumerate()
        .map(|(i, s)| s.closed_loop(scenario.law.own_gain(i)))
        .collect();
    let drive = |informed| &ensemble.b * stack(scenario.offsets(informed).into_iter());
    let offset_drive = [drive(false), drive(true)];
    Ok(RegimeData {
        systems,
        closed_own,
        ensemble,
        offset_drive,
    })
}

/// `ξ_i` from a stacked set of copies: `(F̃ X)_i − F_ii X_i + c_i`.
fn xi_from_views(
    scenario: &Scenario,
    layout: &Layout,
    views: &Vector,
    i: usize,
    informed: bool,
) -> Vector {
    let law = &scenario.law;
    let mut xi = scenario.offsets(informed)[i].clone();
    for j in 0..law.agents() {
        if j != i {
            xi += law.gain(i, j) * layout.block(views, j);
        }
    }
    xi
}

fn tracking_error(tracking: &Tracking, stacked: &Vector) -> f64 {
    let dev = &tracking.to_relative * stacked - &tracking.reference;
    dev.iter().map(|d| d.abs()).sum::<f64>() / dev.len() as f64
}

/// Runs one seeded simulation. With `keep_records = false` only the
/// aggregates and trigger books are returned.
pub fn simulate(
    scenario: &Scenario,
    kind: TriggerKind,
    horizon_m: usize,
    cost: &CostSchedule,
    seed: u64,
    keep_records: bool,
) -> Result<SimTrace> {
    scenario.validate()?;
    let n_agents = scenario.agents.len();
    let horizon = scenario.horizon;
    let m_cap = scenario.trigger.m_cap;
    let mut dims = Vec::with_capacity(n_agents);
    let mut offsets = Vec::with_capacity(n_agents);
    let mut total = 0;
    for m in &scenario.agents {
        offsets.push(total);
        dims.push(m.state_dim());
        total += m.state_dim();
    }
    let layout = Layout { offsets, dims };
    let regimes: Vec<RegimeData> = (0..scenario.regime_count())
        .map(|r| regime_data(scenario, r))
        .collect::<Result<_>>()?;

    let mut init_noise = NoiseSource::new(seed, STREAM_INIT);
    let mut proc_noise = NoiseSource::new(seed, STREAM_PROCESS);
    let mut meas_noise = NoiseSource::new(seed, STREAM_MEASURE);
    let mut drop_noise = NoiseSource::new(seed, STREAM_DROPS);

    let mut x_true: Vec<Vector> = scenario
        .agents
        .iter()
        .map(|m| m.sample_initial_state(&mut init_noise))
        .collect();
    let common_views = stack(scenario.agents.iter().map(|m| &m.x0_mean));
    let book_horizon = match kind {
        TriggerKind::Et => 0,
        TriggerKind::Pt => horizon_m,
        TriggerKind::St => 0,
    };
    let mut agents: Vec<AgentRuntime> = Vec::with_capacity(n_agents);
    for (i, m) in scenario.agents.iter().enumerate() {
        // Step 1 always transmits. PT slots 2..=M have no step with a full
        // lookahead, so they are settled up front from the prior variance.
        let mut book = TriggerBook::new(book_horizon);
        book.record(1, true, None)?;
        if book_horizon >= 2 {
            let r0 = scenario.regime_of(&x_true, 0);
            let sys = &regimes[r0].systems[i];
            let sched = VarianceSchedule::build(sys, 0, m.x0_cov.clone(), book_horizon)?;
            let mut g = GSequence::new(sys, scenario.law.own_gain(i))?;
            g.ensure(book_horizon);
            for t in 2..=book_horizon {
                let (gamma, _) = pt_startup_decide(&book, t, &sched, g.terms(), cost)?;
                book.record(t, gamma, None)?;
            }
        }
        let belief = GaussianBelief::new(m.x0_mean.clone(), m.x0_cov.clone(), 0);
        let xi = xi_from_views(scenario, &layout, &common_views, i, false);
        agents.push(AgentRuntime {
            id: i,
            belief,
            views: common_views.clone(),
            book,
            xi_prev: xi,
            u_prev: Vector::zeros(m.input_dim()),
            informed: false,
            g_cache: (0..scenario.regime_count()).map(|_| None).collect(),
            st_state: None,
        });
    }
    let mut regime = scenario.regime_of(&x_true, 0);

    // u_0 from the prior.
    for a in agents.iter_mut() {
        a.u_prev = control(scenario, a, 0);
    }

    let initial = StepRecord {
        k: 0,
        regime,
        agents: agents
            .iter()
            .map(|a| {
                let xt = &x_true[a.id];
                let xc = layout.block(&a.views, a.id).into_owned();
                AgentRecord {
                    x_true: xt.clone(),
                    x_hat: a.belief.mean.clone(),
                    x_check: xc.clone(),
                    u: a.u_prev.clone(),
                    v: Vector::zeros(xt.len()),
                    gamma: false,
                    signal: None,
                    ell: 0,
                    kappa: a.book.last_scheduled(),
                    e: (xt - &xc).norm_squared(),
                    e_hat: (xt - &a.belief.mean).norm_squared(),
                }
            })
            .collect(),
    };

    let mut records = Vec::with_capacity(if keep_records { horizon } else { 0 });
    let (mut comm_sum, mut err_sum, mut err_hat_sum, mut track_sum) = (0usize, 0.0, 0.0, 0.0);

    for k in 1..=horizon {
        let prev_regime = regime;
        let prev = &regimes[prev_regime];

        // Plant and measurement.
        let mut v_noise = Vec::with_capacity(n_agents);
        for (i, model) in scenario.agents.iter().enumerate() {
            let v = model.sample_process_noise(prev_regime, &mut proc_noise);
            x_true[i] = propagate(&x_true[i], &agents[i].u_prev, &v, &prev.systems[i])?;
            v_noise.push(v);
        }
        let ys: Vec<Vector> = scenario
            .agents
            .iter()
            .enumerate()
            .map(|(i, m)| measure(&x_true[i], m, prev_regime, &mut meas_noise))
            .collect::<Result<_>>()?;

        // Local filters.
        for (a, y) in agents.iter_mut().zip(&ys) {
            a.belief = kf_step(&a.belief, &a.u_prev, y, &prev.systems[a.id])?;
        }
        regime = scenario.regime_of(&x_true, regime);
        let cur = &regimes[regime];

        // Triggers.
        let mut signals: Vec<Option<TriggerSignal>> = vec![None; n_agents];
        for a in agents.iter_mut() {
            let i = a.id;
            let x_check_prev = layout.block(&a.views, i).into_owned();
            let inputs = TriggerInputs {
                x_hat: &a.belief.mean,
                x_check_prev: &x_check_prev,
                xi_prev: &a.xi_prev,
                closed_loop: &prev.closed_own[i],
                b: &prev.systems[i].b,
            };
            match kind {
                TriggerKind::Et => {
                    if k > 1 {
                        let (gamma, sig) = et_decide(&inputs, cost.at(k))?;
                        a.book.record(k, gamma, Some(k))?;
                        signals[i] = Some(sig);
                    }
                }
                TriggerKind::Pt => {
                    let target = k + horizon_m;
                    if target > 1 {
                        let sched = VarianceSchedule::build(
                            &cur.systems[i],
                            k,
                            a.belief.cov.clone(),
                            horizon_m,
                        )?;
                        let g = g_for(
                            &mut a.g_cache,
                            regime,
                            &cur.systems[i],
                            scenario.law.own_gain(i),
                        )?;
                        g.ensure(horizon_m.saturating_sub(1));
                        let (gamma, eval) =
                            pt_decide(&a.book, k, &inputs, &sched, g.terms(), cost)?;
                        a.book.record(target, gamma, Some(k))?;
                        signals[i] = Some(eval.signal);
                    }
                }
                TriggerKind::St => {
                    if a.book.gamma(k) {
                        let mut sched =
                            VarianceSchedule::new(cur.systems[i].clone(), k, a.belief.cov.clone())?;
                        let mut g = g_for(
                            &mut a.g_cache,
                            regime,
                            &cur.systems[i],
                            scenario.law.own_gain(i),
                        )?
                        .clone();
                        let next = match st_next_trigger(k, &mut sched, &mut g, cost, m_cap)? {
                            StOutcome::Interval(m) => m,
                            StOutcome::CapExceeded => m_cap,
                        };
                        a.book.record(k + next, true, Some(k))?;
                        a.st_state = Some((sched, g));
                    }
                    if keep_records {
                        let last = a.book.last_fired(k);
                        if let Some((sched, g)) = a.st_state.as_mut() {
                            signals[i] = Some(st_signal(last, k - last, sched, g)?);
                        }
                    }
                }
            }
        }

        // Broadcast.
        let senders: Vec<(usize, Vector)> = agents
            .iter()
            .filter(|a| a.book.gamma(k))
            .map(|a| (a.id, a.belief.mean.clone()))
            .collect();
        let round = broadcast(k, senders, n_agents, scenario.p_drop, &mut drop_noise)?;

        // Remote predictors: X ← (Ã + B̃F̃) X + B̃c, then resets.
        for a in agents.iter_mut() {
            let mut next =
                &prev.ensemble.closed * &a.views + &prev.offset_drive[usize::from(a.informed)];
            for d in &round.deliveries {
                if d.delivered[a.id] {
                    next.rows_mut(layout.offsets[d.sender], layout.dims[d.sender])
                        .copy_from(&d.payload);
                }
            }
            a.views = next;
            if let Some(change) = &scenario.reference_change {
                if k >= change.step && round.received(a.id, change.owner).is_some() {
                    a.informed = true;
                }
            }
        }

        // Control for the next step.
        for a in agents.iter_mut() {
            let i = a.id;
            a.xi_prev = xi_from_views(scenario, &layout, &a.views, i, a.informed);
            a.u_prev = control(scenario, a, k);
        }

        // Bookkeeping.
        let mut step_agents = Vec::with_capacity(if keep_records { n_agents } else { 0 });
        for a in &agents {
            let i = a.id;
            let xt = &x_true[i];
            let xc = layout.block(&a.views, i);
            let e = (xt - xc).norm_squared();
            let e_hat = (xt - &a.belief.mean).norm_squared();
            let gamma = a.book.gamma(k);
            comm_sum += usize::from(gamma);
            err_sum += e;
            err_hat_sum += e_hat;
            if keep_records {
                step_agents.push(AgentRecord {
                    x_true: xt.clone(),
                    x_hat: a.belief.mean.clone(),
                    x_check: xc.into_owned(),
                    u: a.u_prev.clone(),
                    v: v_noise[i].clone(),
                    gamma,
                    signal: signals[i],
                    ell: a.book.last_fired(k),
                    kappa: a.book.last_scheduled(),
                    e,
                    e_hat,
                });
            }
        }
        if let Some(tr) = &scenario.tracking {
            track_sum += tracking_error(tr, &stack(x_true.iter()));
        }
        if keep_records {
            records.push(StepRecord {
                k,
                regime,
                agents: step_agents,
            });
        }
    }

    let slots = (horizon * n_agents).max(1) as f64;
    let stats = RunStats {
        steps: horizon,
        agents: n_agents,
        comm: comm_sum as f64 / slots,
        err: err_sum / slots,
        err_hat: err_hat_sum / slots,
        tracking: scenario
            .tracking
            .as_ref()
            .map(|_| track_sum / horizon.max(1) as f64),
    };
    Ok(SimTrace {
        scenario: scenario.name.clone(),
        kind,
        seed,
        initial,
        records,
        books: agents.into_iter().map(|a| a.book).collect(),
        stats,
    })
}

/// `u_k = F_ii x̂ + ξ`, where the owner of a reference change applies it
/// from its step on, before anyone else has heard of it.
fn control(scenario: &Scenario, a: &AgentRuntime, k: usize) -> Vector {
    let i = a.id;
    let mut u = scenario.law.own_gain(i) * &a.belief.mean + &a.xi_prev;
    if let Some(change) = &scenario.reference_change {
        if change.owner == i && k >= change.step && !a.informed {
            u += &change.offsets[i] - scenario.law.offset(i);
        }
    }
    u
}

fn g_for<'a>(
    cache: &'a mut [Option<GSequence>],
    regime: usize,
    sys: &SystemMatrices,
    own_gain: &Matrix,
) -> Result<&'a mut GSequence> {
    if cache[regime].is_none() {
        cache[regime] = Some(GSequence::new(sys, own_gain)?);
    }
    Ok(cache[regime].as_mut().expect("just filled"))
}

/// Single traced run with the scenario's trigger configuration.
pub fn run_simulation(
    scenario: &Scenario,
    kind: TriggerKind,
    cost: &CostSchedule,
    seed: u64,
) -> Result<SimTrace> {
    simulate(scenario, kind, scenario.trigger.horizon_m, cost, seed, true)
}

/// Normalized L1 tracking cost `J̃` averaged over traces.
pub fn performance_metric(traces: &[SimTrace], tracking: Option<&Tracking>) -> Result<f64> {
    let tracking = tracking
        .ok_or_else(|| Error::Contract("performance metric needs a tracking reference".into()))?;
    if traces.is_empty() {
        return Err(Error::Contract("no traces given".into()));
    }
    let mut total = 0.0;
    for t in traces {
        if t.records.is_empty() {
            return Err(Error::Contract("trace was run without records".into()));
        }
        let sum: f64 = t
            .records
            .iter()
            .map(|r| tracking_error(tracking, &r.stacked_true()))
            .sum();
        total += sum / t.records.len() as f64;
    }
    Ok(total / traces.len() as f64)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SweepPoint {
    #[serde(rename = "C")]
    pub cost: f64,
    pub comm_avg: f64,
    pub err_avg: f64,
    pub err_std: f64,
    pub runs: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub tracking_avg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub tracking_std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SweepSummary {
    pub scenario: String,
    pub kind: TriggerKind,
    pub horizon_m: usize,
    pub points: Vec<SweepPoint>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Monte Carlo over a constant-cost grid. Run `r` uses seed `seed_base + r`
/// at every grid point; results do not depend on thread scheduling.
pub fn monte_carlo_sweep(
    scenario: &Scenario,
    kind: TriggerKind,
    horizon_m: usize,
    cost_grid: &[f64],
    runs: usize,
    seed_base: u64,
) -> Result<SweepSummary> {
    if runs == 0 {
        return Err(Error::Config("a sweep needs at least one run".into()));
    }
    if cost_grid.is_empty() {
        return Err(Error::Config("cost grid is empty".into()));
    }
    scenario.validate()?;
    let jobs: Vec<(usize, usize)> = (0..cost_grid.len())
        .flat_map(|c| (0..runs).map(move |r| (c, r)))
        .collect();
    let results: Vec<RunStats> = jobs
        .par_iter()
        .map(|&(c, r)| {
            simulate(
                scenario,
                kind,
                horizon_m,
                &CostSchedule::Constant(cost_grid[c]),
                seed_base.wrapping_add(r as u64),
                false,
            )
            .map(|t| t.stats)
        })
        .collect::<Result<_>>()?;
    let points = cost_grid
        .iter()
        .enumerate()
        .map(|(c, &cost)| {
            let stats = &results[c * runs..(c + 1) * runs];
            let comm: Vec<f64> = stats.iter().map(|s| s.comm).collect();
            let err: Vec<f64> = stats.iter().map(|s| s.err).collect();
            let (err_avg, err_std) = mean_std(&err);
            let tracking: Option<Vec<f64>> = stats.iter().map(|s| s.tracking).collect();
            let (tracking_avg, tracking_std) = match tracking {
                Some(t) => {
                    let (m, s) = mean_std(&t);
                    (Some(m), Some(s))
                }
                None => (None, None),
            };
            SweepPoint {
                cost,
                comm_avg: mean_std(&comm).0,
                err_avg,
                err_std,
                runs,
                tracking_avg,
                tracking_std,
            }
        })
        .collect();
    Ok(SweepSummary {
        scenario: scenario.name.clone(),
        kind,
        horizon_m,
        points,
    })
}
