//! Scenario definitions: the JSON schema, built-in scenarios, validation,
//! and CSV/JSON emission of traces, sweeps and allocation logs.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::control::{assemble_closed_loop, ControlLaw};
use crate::error::{Error, Result};
use crate::network_sim::{allocation_log, AllocationEntry};
use crate::numerics::{
    block_diag, is_symmetric_psd, solve_lqr, spectral_radius, Matrix, Vector, PSD_TOL,
};
use crate::orchestrator::{SimTrace, SweepSummary};
use crate::plant::{build_platoon_model, LinearModel, PlatoonConfig, SurfaceRule, SystemMatrices};
use crate::trigger::{CostSchedule, TriggerKind};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_M_CAP: usize = 1000;
pub const BUILTIN_NAMES: [&str; 3] = ["example1", "platoon10", "platoon3-brake"];

// ---------------------------------------------------------------------------
// Serialized form

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub schema_version: u32,
    pub name: String,
    pub system: SystemSpec,
    pub trigger: TriggerSpec,
    #[serde(default)]
    pub network: NetworkSpec,
    /// Number of simulated steps.
    pub horizon: usize,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub seed: u64,
    /// Skip the closed-loop stability gate.
    #[serde(default)]
    pub allow_unstable: bool,
}

fn default_runs() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum SystemSpec {
    Agents {
        agents: Vec<AgentSpec>,
        #[serde(default)]
        control: ControlSpec,
    },
    Platoon(PlatoonSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub h: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    pub x0_mean: Vec<f64>,
    pub x0_cov: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum ControlSpec {
    #[default]
    None,
    /// Explicit blocks `gains[i][j]` (rows of `F_ij`).
    Gains {
        gains: Vec<Vec<Vec<Vec<f64>>>>,
        #[serde(default)]
        reference: Option<Vec<f64>>,
    },
    /// LQR on the stacked model with weights `Q`, `R`.
    Lqr {
        q: Vec<Vec<f64>>,
        r: Vec<Vec<f64>>,
        #[serde(default)]
        reference: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlatoonSpec {
    pub vehicles: usize,
    pub dt: f64,
    pub speed: f64,
    pub gap: f64,
    #[serde(default = "one")]
    pub lqr_q_scale: f64,
    #[serde(default = "thousand")]
    pub lqr_r_scale: f64,
    #[serde(default = "tenth")]
    pub measurement_half_width: f64,
    #[serde(default = "tenth")]
    pub input_half_width: f64,
    #[serde(default = "initial_std")]
    pub initial_std: f64,
    #[serde(default)]
    pub surface: Option<SurfaceSpec>,
    #[serde(default)]
    pub braking: Option<BrakingSpec>,
}

fn one() -> f64 {
    1.0
}
fn thousand() -> f64 {
    1000.0
}
fn tenth() -> f64 {
    0.1
}
fn initial_std() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceSpec {
    pub threshold: f64,
    pub position_scale: f64,
    pub input_scale: f64,
}

/// At `time` seconds the platoon reference speed steps to `speed`. The lead
/// decides this; followers adopt it once they hear from the lead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BrakingSpec {
    pub time: f64,
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CostSpec {
    Constant(f64),
    Sequence(Vec<f64>),
}

impl CostSpec {
    pub fn to_schedule(&self) -> CostSchedule {
        match self {
            CostSpec::Constant(c) => CostSchedule::Constant(*c),
            CostSpec::Sequence(v) => CostSchedule::Sequence(v.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriggerSpec {
    pub kind: TriggerKind,
    #[serde(default = "default_m")]
    pub horizon_m: usize,
    pub cost: CostSpec,
    #[serde(default)]
    pub cost_grid: Vec<f64>,
    #[serde(default = "default_m_cap")]
    pub m_cap: usize,
}

fn default_m() -> usize {
    2
}
fn default_m_cap() -> usize {
    DEFAULT_M_CAP
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    #[serde(default)]
    pub p_drop: f64,
}

// ---------------------------------------------------------------------------
// Runtime form

#[derive(Debug, Clone, PartialEq)]
pub struct TriggerConfig {
    pub kind: TriggerKind,
    pub horizon_m: usize,
    pub cost: CostSchedule,
    pub cost_grid: Vec<f64>,
    pub m_cap: usize,
}

/// All regimes switch once `agent`'s state component `index` reaches
/// `threshold`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegimeSwitch {
    pub agent: usize,
    pub index: usize,
    pub threshold: f64,
}

/// A change of the control offsets `c_i` (a new reference) decided by
/// `owner` at `step`. Everyone else learns about it on the next delivery
/// from the owner.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceChange {
    pub step: usize,
    pub owner: usize,
    pub offsets: Vec<Vector>,
}

/// Reference for the normalized L1 tracking cost: `T x̃ − r`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tracking {
    pub to_relative: Matrix,
    pub reference: Vector,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub agents: Vec<LinearModel>,
    pub law: ControlLaw,
    pub switch: Option<RegimeSwitch>,
    pub trigger: TriggerConfig,
    pub p_drop: f64,
    pub horizon: usize,
    pub runs: usize,
    pub seed: u64,
    pub reference_change: Option<ReferenceChange>,
    pub tracking: Option<Tracking>,
    /// Matrix whose spectral radius must be below one (coordinated
    /// scenarios only).
    pub stability_matrix: Option<Matrix>,
    pub allow_unstable: bool,
    /// Platoon sample time, when applicable.
    pub dt: Option<f64>,
}

impl Scenario {
    pub fn regime_count(&self) -> usize {
        self.agents[0].regime_count()
    }

    /// Regime after observing the true states; switches are one-way.
    pub fn regime_of(&self, x_true: &[Vector], current: usize) -> usize {
        match self.switch {
            Some(sw) if current == 0 && x_true[sw.agent][sw.index] >= sw.threshold => 1,
            _ => current,
        }
    }

    /// Control offsets before or after the reference change.
    pub fn offsets(&self, changed: bool) -> Vec<&Vector> {
        match (&self.reference_change, changed) {
            (Some(c), true) => c.offsets.iter().collect(),
            _ => (0..self.law.agents()).map(|i| self.law.offset(i)).collect(),
        }
    }

    /// Spectral radius checked by the stability gate.
    pub fn closed_loop_radius(&self) -> Result<Option<f64>> {
        match &self.stability_matrix {
            Some(m) => spectral_radius(m).map(Some),
            None => Ok(None),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.agents.is_empty() {
            return Err(Error::Config("scenario has no agents".into()));
        }
        let regimes = self.agents[0].regime_count();
        if self.agents.iter().any(|a| a.regime_count() != regimes) {
            return Err(Error::Config(
                "all agents must have the same number of regimes".into(),
            ));
        }
        if self.switch.is_some() != (regimes == 2) || regimes > 2 {
            return Err(Error::Config(
                "regime switch and agent regimes disagree".into(),
            ));
        }
        let nominal: Vec<&SystemMatrices> = self.agents.iter().map(|a| a.nominal()).collect();
        self.law.check_against(&nominal)?;
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least one step".into()));
        }
        if !(0.0..=1.0).contains(&self.p_drop) {
            return Err(Error::Config(format!(
                "p_drop {} outside [0, 1]",
                self.p_drop
            )));
        }
        if self.trigger.m_cap == 0 {
            return Err(Error::Config("m_cap must be at least 1".into()));
        }
        let costs_ok = match &self.trigger.cost {
            CostSchedule::Constant(c) => c.is_finite() && *c >= 0.0,
            CostSchedule::Sequence(v) => {
                !v.is_empty() && v.iter().all(|c| c.is_finite() && *c >= 0.0)
            }
        };
        if !costs_ok
            || self
                .trigger
                .cost_grid
                .iter()
                .any(|c| !c.is_finite() || *c < 0.0)
        {
            return Err(Error::Config(
                "communication costs must be finite and non-negative".into(),
            ));
        }
        if let Some(c) = &self.reference_change {
            let ok = c.owner < self.agents.len()
                && c.offsets.len() == self.agents.len()
                && c.offsets
                    .iter()
                    .zip(&self.agents)
                    .all(|(o, a)| o.len() == a.input_dim());
            if !ok {
                return Err(Error::Config(
                    "reference change does not match the agents".into(),
                ));
            }
        }
        if let Some(sw) = self.switch {
            if sw.agent >= self.agents.len() || sw.index >= self.agents[sw.agent].state_dim() {
                return Err(Error::Config(
                    "regime switch refers to a missing state".into(),
                ));
            }
        }
        if !self.allow_unstable {
            if let Some(rho) = self.closed_loop_radius()? {
                if rho >= 1.0 {
                    return Err(Error::Config(format!(
                        "coordinated closed loop is not stable (spectral radius {rho:.6})"
                    )));
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Building

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<Matrix> {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(Error::Config(format!(
            "{what} must be a non-empty rectangular matrix"
        )));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Config(format!("{what} has non-finite entries")));
    }
    Ok(Matrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn vector(v: &[f64], what: &str) -> Result<Vector> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Config(format!("{what} has non-finite entries")));
    }
    Ok(Vector::from_column_slice(v))
}

fn config_err(e: Error) -> Error {
    match e {
        Error::Dimension(m) => Error::Config(format!("dimension mismatch: {m}")),
        other => other,
    }
}

impl ScenarioSpec {
    pub fn build(&self) -> Result<Scenario> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let trigger = TriggerConfig {
            kind: self.trigger.kind,
            horizon_m: self.trigger.horizon_m,
            cost: self.trigger.cost.to_schedule(),
            cost_grid: self.trigger.cost_grid.clone(),
            m_cap: self.trigger.m_cap,
        };
        let mut scenario = match &self.system {
            SystemSpec::Agents { agents, control } => build_agents(agents, control)?,
            SystemSpec::Platoon(p) => build_platoon(p)?,
        };
        scenario.name = self.name.clone();
        scenario.trigger = trigger;
        scenario.p_drop = self.network.p_drop;
        scenario.horizon = self.horizon;
        scenario.runs = self.runs;
        scenario.seed = self.seed;
        scenario.allow_unstable = self.allow_unstable;
        scenario.validate().map_err(config_err)?;
        Ok(scenario)
    }
}

fn placeholder_trigger() -> TriggerConfig {
    TriggerConfig {
        kind: TriggerKind::Et,
        horizon_m: 0,
        cost: CostSchedule::Constant(0.0),
        cost_grid: Vec::new(),
        m_cap: DEFAULT_M_CAP,
    }
}

fn build_agents(agents: &[AgentSpec], control: &ControlSpec) -> Result<Scenario> {
    if agents.is_empty() {
        return Err(Error::Config("at least one agent is required".into()));
    }
    let mut models = Vec::with_capacity(agents.len());
    for (i, a) in agents.iter().enumerate() {
        let sys = SystemMatrices {
            a: matrix(&a.a, &format!("agents[{i}].a"))?,
            b: matrix(&a.b, &format!("agents[{i}].b"))?,
            h: matrix(&a.h, &format!("agents[{i}].h"))?,
            q: matrix(&a.q, &format!("agents[{i}].q"))?,
            r: matrix(&a.r, &format!("agents[{i}].r"))?,
        };
        sys.check_dimensions().map_err(config_err)?;
        let x0 = vector(&a.x0_mean, &format!("agents[{i}].x0_mean"))?;
        let x0_cov = matrix(&a.x0_cov, &format!("agents[{i}].x0_cov"))?;
        models.push(LinearModel::gaussian(sys, x0, x0_cov).map_err(config_err)?);
    }
    let systems: Vec<&SystemMatrices> = models.iter().map(|m| m.nominal()).collect();
    let input_dims: Vec<usize> = systems.iter().map(|s| s.input_dim()).collect();
    let state_dims: Vec<usize> = systems.iter().map(|s| s.state_dim()).collect();

    let law = match control {
        ControlSpec::None => ControlLaw::zero(&systems),
        ControlSpec::Gains { gains, reference } => {
            let blocks = gains
                .iter()
                .enumerate()
                .map(|(i, row)| {
                    row.iter()
                        .enumerate()
                        .map(|(j, f)| matrix(f, &format!("gains[{i}][{j}]")))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            let law = ControlLaw::new(blocks, None).map_err(config_err)?;
            with_optional_reference(law, reference.as_deref())?
        }
        ControlSpec::Lqr { q, r, reference } => {
            let a_blocks: Vec<&Matrix> = systems.iter().map(|s| &s.a).collect();
            let b_blocks: Vec<&Matrix> = systems.iter().map(|s| &s.b).collect();
            let a = block_diag(&a_blocks);
            let b = block_diag(&b_blocks);
            let q = matrix(q, "control.q")?;
            let r = matrix(r, "control.r")?;
            if !is_symmetric_psd(&r, PSD_TOL) || r.clone().cholesky().is_none() {
                return Err(Error::Config(
                    "LQR weight R must be symmetric positive definite".into(),
                ));
            }
            let f = solve_lqr(&a, &b, &q, &r).map_err(config_err)?;
            let law = ControlLaw::from_ensemble(&f, &input_dims, &state_dims, None)
                .map_err(config_err)?;
            with_optional_reference(law, reference.as_deref())?
        }
    };
    law.check_against(&systems).map_err(config_err)?;
    let coordinated = (0..law.agents())
        .any(|i| (0..law.agents()).any(|j| law.gain(i, j).iter().any(|&v| v != 0.0)));
    let stability_matrix = if coordinated {
        Some(assemble_closed_loop(&systems, &law)?.closed)
    } else {
        None
    };
    Ok(Scenario {
        name: String::new(),
        agents: models,
        law,
        switch: None,
        trigger: placeholder_trigger(),
        p_drop: 0.0,
        horizon: 1,
        runs: 1,
        seed: 0,
        reference_change: None,
        tracking: None,
        stability_matrix,
        allow_unstable: false,
        dt: None,
    })
}

fn with_optional_reference(law: ControlLaw, reference: Option<&[f64]>) -> Result<ControlLaw> {
    match reference {
        Some(r) => law
            .with_reference(&vector(r, "control.reference")?)
            .map_err(config_err),
        None => Ok(law),
    }
}

fn build_platoon(p: &PlatoonSpec) -> Result<Scenario> {
    let mut cfg = PlatoonConfig::new(p.vehicles, p.dt);
    cfg.initial_speed = p.speed;
    cfg.initial_gap = p.gap;
    cfg.measurement_half_width = p.measurement_half_width;
    cfg.input_half_width = p.input_half_width;
    cfg.initial_std = p.initial_std;
    cfg.surface = p.surface.as_ref().map(|s| SurfaceRule {
        threshold: s.threshold,
        position_scale: s.position_scale,
        input_scale: s.input_scale,
    });
    if !(p.lqr_q_scale > 0.0 && p.lqr_r_scale > 0.0) {
        return Err(Error::Config("LQR weight scales must be positive".into()));
    }
    let model = build_platoon_model(&cfg)?;
    let n = model.vehicles();
    let dim = model.relative_dim();
    let q = Matrix::identity(dim, dim) * p.lqr_q_scale;
    let r = Matrix::identity(n, n) * p.lqr_r_scale;
    let f_rel = solve_lqr(&model.ensemble_a, &model.ensemble_b, &q, &r)?;
    let reference = model.relative_reference(p.speed, p.gap);
    let c = -(&f_rel * &reference);
    let offsets = (0..n).map(|i| Vector::from_element(1, c[i])).collect();
    let f_abs = &f_rel * &model.to_relative;
    let law = ControlLaw::from_ensemble(&f_abs, &vec![1; n], &vec![2; n], Some(offsets))?;

    let reference_change = match &p.braking {
        Some(b) => {
            if b.time.is_nan() || b.time < 0.0 {
                return Err(Error::Config("braking time must be non-negative".into()));
            }
            // The whole platoon's reference speed drops; only the lead knows
            // at first.
            let c = -(&f_rel * model.relative_reference(b.speed, p.gap));
            Some(ReferenceChange {
                step: (b.time / p.dt).round() as usize,
                owner: 0,
                offsets: (0..n).map(|i| Vector::from_element(1, c[i])).collect(),
            })
        }
        None => None,
    };
    let stability = &model.ensemble_a + &model.ensemble_b * &f_rel;
    Ok(Scenario {
        name: String::new(),
        switch: cfg.surface.map(|s| RegimeSwitch {
            agent: 0,
            index: 0,
            threshold: s.threshold,
        }),
        agents: model.agents.clone(),
        law,
        trigger: placeholder_trigger(),
        p_drop: 0.0,
        horizon: 1,
        runs: 1,
        seed: 0,
        reference_change,
        tracking: Some(Tracking {
            to_relative: model.to_relative.clone(),
            reference,
        }),
        stability_matrix: Some(stability),
        allow_unstable: false,
        dt: Some(p.dt),
    })
}

// ---------------------------------------------------------------------------
// Built-ins and loading

fn scalar(v: f64) -> Vec<Vec<f64>> {
    vec![vec![v]]
}

/// Geometric grid from `lo` to `hi` with `n` points (plus zero).
fn cost_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let mut g = vec![0.0];
    let ratio = (hi / lo).powf(1.0 / (n - 1) as f64);
    g.extend((0..n).map(|i| lo * ratio.powi(i as i32)));
    g
}

pub fn builtin_spec(name: &str) -> Option<ScenarioSpec> {
    match name {
        "example1" => Some(ScenarioSpec {
            schema_version: SCHEMA_VERSION,
            name: "example1".into(),
            system: SystemSpec::Agents {
                agents: vec![AgentSpec {
                    a: scalar(0.98),
                    b: scalar(0.0),
                    h: scalar(1.0),
                    q: scalar(0.1),
                    r: scalar(0.1),
                    x0_mean: vec![1.0],
                    x0_cov: scalar(1.0),
                }],
                control: ControlSpec::None,
            },
            trigger: TriggerSpec {
                kind: TriggerKind::St,
                horizon_m: 2,
                cost: CostSpec::Constant(0.6),
                cost_grid: cost_grid(0.02, 3.0, 14),
                m_cap: DEFAULT_M_CAP,
            },
            network: NetworkSpec { p_drop: 0.0 },
            horizon: 200,
            runs: 2000,
            seed: 1,
            allow_unstable: false,
        }),
        "platoon10" => Some(ScenarioSpec {
            schema_version: SCHEMA_VERSION,
            name: "platoon10".into(),
            system: SystemSpec::Platoon(PlatoonSpec {
                vehicles: 10,
                dt: 0.1,
                speed: 22.2,
                gap: 10.0,
                lqr_q_scale: 1.0,
                lqr_r_scale: 1000.0,
                measurement_half_width: 0.1,
                input_half_width: 0.1,
                initial_std: initial_std(),
                surface: Some(SurfaceSpec {
                    threshold: 200.0,
                    position_scale: 1.5,
                    input_scale: 0.5,
                }),
                braking: None,
            }),
            trigger: TriggerSpec {
                kind: TriggerKind::Pt,
                horizon_m: 2,
                cost: CostSpec::Constant(0.05),
                cost_grid: cost_grid(0.001, 1.0, 10),
                m_cap: DEFAULT_M_CAP,
            },
            network: NetworkSpec { p_drop: 0.1 },
            horizon: 250,
            runs: 100,
            seed: 1,
            allow_unstable: false,
        }),
        "platoon3-brake" => Some(ScenarioSpec {
            schema_version: SCHEMA_VERSION,
            name: "platoon3-brake".into(),
            system: SystemSpec::Platoon(PlatoonSpec {
                vehicles: 3,
                dt: 0.1,
                speed: 22.2,
                gap: 10.0,
                lqr_q_scale: 1.0,
                lqr_r_scale: 1000.0,
                measurement_half_width: 0.1,
                input_half_width: 0.1,
                initial_std: initial_std(),
                surface: None,
                braking: Some(BrakingSpec {
                    time: 10.0,
                    speed: 0.0,
                }),
            }),
            trigger: TriggerSpec {
                kind: TriggerKind::Pt,
                horizon_m: 2,
                cost: CostSpec::Constant(10.0),
                cost_grid: Vec::new(),
                m_cap: DEFAULT_M_CAP,
            },
            network: NetworkSpec { p_drop: 0.0 },
            horizon: 300,
            runs: 100,
            seed: 1,
            allow_unstable: false,
        }),
        _ => None,
    }
}

pub fn builtin(name: &str) -> Result<Scenario> {
    builtin_spec(name)
        .ok_or_else(|| {
            Error::Config(format!(
                "unknown built-in scenario {name:?} (available: {})",
                BUILTIN_NAMES.join(", ")
            ))
        })?
        .build()
}

pub fn parse_scenario_spec(text: &str, path: &Path) -> Result<ScenarioSpec> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Reads and validates a JSON scenario file.
pub fn load_scenario(path: &Path) -> Result<Scenario> {
    load_scenario_spec(path)?.build()
}

pub fn load_scenario_spec(path: &Path) -> Result<ScenarioSpec> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_scenario_spec(&text, path)
}

/// A built-in name or a path to a JSON file.
pub fn resolve_spec(name_or_path: &str) -> Result<ScenarioSpec> {
    match builtin_spec(name_or_path) {
        Some(spec) => Ok(spec),
        None if Path::new(name_or_path).exists() => load_scenario_spec(Path::new(name_or_path)),
        None => Err(Error::Config(format!(
            "{name_or_path:?} is neither a built-in scenario ({}) nor a file",
            BUILTIN_NAMES.join(", ")
        ))),
    }
}

// ---------------------------------------------------------------------------
// Output

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

impl std::str::FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(Error::Config(format!("unknown output format {other:?}"))),
        }
    }
}

/// Rounds to 12 significant digits.
pub fn round12(v: f64) -> f64 {
    if !v.is_finite() || v == 0.0 {
        return v;
    }
    format!("{v:.11e}").parse().unwrap_or(v)
}

pub fn fmt12(v: f64) -> String {
    format!("{}", round12(v))
}

fn opt12(v: Option<f64>) -> String {
    v.map(fmt12).unwrap_or_default()
}

pub const TRACE_FIXED_HEADER: [&str; 8] = [
    "e", "e_hat", "gamma", "E_bar", "E_mean", "E_var", "ell", "kappa",
];
pub const SWEEP_HEADER: [&str; 5] = ["C", "comm_avg", "err_avg", "err_std", "runs"];
pub const ALLOCATION_HEADER: [&str; 4] = ["round", "agent", "decided_at", "lead_time"];

fn trace_state_dim(trace: &SimTrace) -> usize {
    trace
        .initial
        .agents
        .iter()
        .map(|a| a.x_true.len())
        .max()
        .unwrap_or(0)
}

pub fn trace_header(state_dim: usize) -> Vec<String> {
    let mut h = vec!["k".to_string(), "agent".to_string()];
    for prefix in ["x_true", "x_hat", "x_check"] {
        h.extend((0..state_dim).map(|i| format!("{prefix}_{i}")));
    }
    h.extend(TRACE_FIXED_HEADER.iter().map(|s| s.to_string()));
    h
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn vec_cells(v: &Vector, dim: usize) -> impl Iterator<Item = String> + '_ {
    (0..dim).map(move |i| v.get(i).map(|x| fmt12(*x)).unwrap_or_default())
}

pub fn write_trace_csv<W: Write>(trace: &SimTrace, out: W, path: &Path) -> Result<()> {
    let dim = trace_state_dim(trace);
    let mut w = csv::Writer::from_writer(out);
    w.write_record(trace_header(dim)).map_err(csv_err(path))?;
    for rec in &trace.records {
        for (agent, a) in rec.agents.iter().enumerate() {
            let mut row = vec![rec.k.to_string(), agent.to_string()];
            row.extend(vec_cells(&a.x_true, dim));
            row.extend(vec_cells(&a.x_hat, dim));
            row.extend(vec_cells(&a.x_check, dim));
            row.push(fmt12(a.e));
            row.push(fmt12(a.e_hat));
            row.push(u8::from(a.gamma).to_string());
            row.push(opt12(a.signal.map(|s| s.e_bar)));
            row.push(opt12(a.signal.map(|s| s.e_mean)));
            row.push(opt12(a.signal.map(|s| s.e_var)));
            row.push(a.ell.to_string());
            row.push(a.kappa.to_string());
            w.write_record(&row).map_err(csv_err(path))?;
        }
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub k: usize,
    pub agent: usize,
    pub x_true: Vec<f64>,
    pub x_hat: Vec<f64>,
    pub x_check: Vec<f64>,
    pub e: f64,
    pub e_hat: f64,
    pub gamma: u8,
    #[serde(rename = "E_bar")]
    pub e_bar: Option<f64>,
    #[serde(rename = "E_mean")]
    pub e_mean: Option<f64>,
    #[serde(rename = "E_var")]
    pub e_var: Option<f64>,
    pub ell: usize,
    pub kappa: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceDocument {
    pub scenario: String,
    pub trigger: TriggerKind,
    pub seed: u64,
    pub comm_fraction: f64,
    pub mean_squared_error: f64,
    pub rows: Vec<TraceRow>,
    pub allocation: Vec<AllocationEntry>,
}

fn round_vec(v: &Vector) -> Vec<f64> {
    v.iter().map(|x| round12(*x)).collect()
}

pub fn trace_document(trace: &SimTrace) -> TraceDocument {
    let rows = trace
        .records
        .iter()
        .flat_map(|rec| {
            rec.agents
                .iter()
                .enumerate()
                .map(move |(agent, a)| TraceRow {
                    k: rec.k,
                    agent,
                    x_true: round_vec(&a.x_true),
                    x_hat: round_vec(&a.x_hat),
                    x_check: round_vec(&a.x_check),
                    e: round12(a.e),
                    e_hat: round12(a.e_hat),
                    gamma: u8::from(a.gamma),
                    e_bar: a.signal.map(|s| round12(s.e_bar)),
                    e_mean: a.signal.map(|s| round12(s.e_mean)),
                    e_var: a.signal.map(|s| round12(s.e_var)),
                    ell: a.ell,
                    kappa: a.kappa,
                })
        })
        .collect();
    let books: Vec<_> = trace.books.iter().collect();
    TraceDocument {
        scenario: trace.scenario.clone(),
        trigger: trace.kind,
        seed: trace.seed,
        comm_fraction: round12(trace.stats.comm),
        mean_squared_error: round12(trace.stats.err),
        rows,
        allocation: allocation_log(&books, trace.stats.steps),
    }
}

pub fn write_sweep_csv<W: Write>(summary: &SweepSummary, out: W, path: &Path) -> Result<()> {
    let tracking = summary.points.iter().any(|p| p.tracking_avg.is_some());
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = SWEEP_HEADER.to_vec();
    if tracking {
        header.extend(["J_avg", "J_std"]);
    }
    w.write_record(&header).map_err(csv_err(path))?;
    for p in &summary.points {
        let mut row = vec![
            fmt12(p.cost),
            fmt12(p.comm_avg),
            fmt12(p.err_avg),
            fmt12(p.err_std),
            p.runs.to_string(),
        ];
        if tracking {
            row.push(opt12(p.tracking_avg));
            row.push(opt12(p.tracking_std));
        }
        w.write_record(&row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// Reads the leading sweep columns back.
pub fn read_sweep_csv(text: &str, path: &Path) -> Result<Vec<[f64; 5]>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(csv_err(path))?.clone();
    if header.iter().take(5).ne(SWEEP_HEADER.iter().copied()) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            message: "unexpected sweep header".into(),
        });
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err(path))?;
        let mut row = [0.0; 5];
        for (i, cell) in row.iter_mut().enumerate() {
            *cell = rec[i].parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                message: format!("bad number {:?}", &rec[i]),
            })?;
        }
        out.push(row);
    }
    Ok(out)
}

pub fn write_allocation_csv<W: Write>(log: &[AllocationEntry], out: W, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ALLOCATION_HEADER).map_err(csv_err(path))?;
    for e in log {
        w.write_record([
            e.round.to_string(),
            e.agent.to_string(),
            e.decided_at.map(|d| d.to_string()).unwrap_or_default(),
            e.lead_time.map(|d| d.to_string()).unwrap_or_default(),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

fn rounded_summary(summary: &SweepSummary) -> SweepSummary {
    let mut s = summary.clone();
    for p in &mut s.points {
        p.cost = round12(p.cost);
        p.comm_avg = round12(p.comm_avg);
        p.err_avg = round12(p.err_avg);
        p.err_std = round12(p.err_std);
        p.tracking_avg = p.tracking_avg.map(round12);
        p.tracking_std = p.tracking_std.map(round12);
    }
    s
}

fn write_json<T: Serialize, W: Write>(value: &T, mut out: W, path: &Path) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    })?;
    writeln!(out).map_err(io_err(path))
}

/// Something that can be emitted.
pub enum Output<'a> {
    Trace(&'a SimTrace),
    Sweep(&'a SweepSummary),
    Allocation(&'a [AllocationEntry]),
}

pub fn emit<W: Write>(output: Output<'_>, out: W, format: OutputFormat, path: &Path) -> Result<()> {
    match (output, format) {
        (Output::Trace(t), OutputFormat::Csv) => write_trace_csv(t, out, path),
        (Output::Trace(t), OutputFormat::Json) => write_json(&trace_document(t), out, path),
        (Output::Sweep(s), OutputFormat::Csv) => write_sweep_csv(s, out, path),
        (Output::Sweep(s), OutputFormat::Json) => write_json(&rounded_summary(s), out, path),
        (Output::Allocation(l), OutputFormat::Csv) => write_allocation_csv(l, out, path),
        (Output::Allocation(l), OutputFormat::Json) => write_json(&l, out, path),
    }
}

/// Writes to `path`, creating or truncating it.
pub fn emit_outputs(output: Output<'_>, path: &Path, format: OutputFormat) -> Result<()> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let buf = std::io::BufWriter::new(file);
    emit(output, buf, format, path)
}
