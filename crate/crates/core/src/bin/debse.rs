//! Command-line front end: `run`, `sweep`, `schedule`, `validate`.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use debse::error::{Error, Result};
use debse::estimator::VarianceSchedule;
use debse::network_sim::allocation_log;
use debse::orchestrator::{monte_carlo_sweep, simulate};
use debse::scenarios::{
    emit, emit_outputs, fmt12, resolve_spec, CostSpec, Output, OutputFormat, ScenarioSpec,
};
use debse::trigger::{st_next_trigger, GSequence, StOutcome, TriggerKind};

#[derive(Parser)]
#[command(
    name = "debse",
    version,
    about = "Distributed event-based state estimation simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one seeded trace.
    Run(Common),
    /// Monte Carlo communication/estimation trade-off over a cost grid.
    Sweep(Common),
    /// Print the offline self-trigger schedule of every agent.
    Schedule(Common),
    /// Check a scenario and exit.
    Validate(Common),
}

#[derive(Args)]
struct Common {
    /// Built-in name or path to a JSON scenario.
    #[arg(long, default_value = "example1")]
    scenario: String,
    #[arg(long)]
    trigger: Option<TriggerKind>,
    #[arg(long = "horizon-m")]
    horizon_m: Option<usize>,
    #[arg(long)]
    cost: Option<f64>,
    /// Comma-separated costs.
    #[arg(long = "cost-grid", value_delimiter = ',')]
    cost_grid: Option<Vec<f64>>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "csv")]
    format: OutputFormat,
    /// Also write the slot allocation log here (run only).
    #[arg(long)]
    allocation: Option<PathBuf>,
}

impl Common {
    fn spec(&self) -> Result<ScenarioSpec> {
        let mut spec = resolve_spec(&self.scenario)?;
        if let Some(k) = self.trigger {
            spec.trigger.kind = k;
        }
        if let Some(m) = self.horizon_m {
            spec.trigger.horizon_m = m;
        }
        if let Some(c) = self.cost {
            spec.trigger.cost = CostSpec::Constant(c);
        }
        if let Some(g) = &self.cost_grid {
            spec.trigger.cost_grid = g.clone();
        }
        if let Some(r) = self.runs {
            spec.runs = r;
        }
        if let Some(s) = self.seed {
            spec.seed = s;
        }
        Ok(spec)
    }

    fn write(&self, output: Output<'_>) -> Result<()> {
        match &self.out {
            Some(path) => emit_outputs(output, path, self.format),
            None => {
                let stdout = std::io::stdout();
                emit(output, stdout.lock(), self.format, Path::new("<stdout>"))
            }
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Validate(c) => {
            let scenario = c.spec()?.build()?;
            let rho = scenario
                .closed_loop_radius()?
                .map(|r| format!(", closed-loop spectral radius {}", fmt12(r)))
                .unwrap_or_default();
            println!(
                "{}: ok ({} agents, {} steps{rho})",
                scenario.name,
                scenario.agents.len(),
                scenario.horizon
            );
            Ok(())
        }
        Command::Run(c) => {
            let scenario = c.spec()?.build()?;
            let t = &scenario.trigger;
            let trace = simulate(&scenario, t.kind, t.horizon_m, &t.cost, scenario.seed, true)?;
            c.write(Output::Trace(&trace))?;
            if let Some(path) = &c.allocation {
                let books: Vec<_> = trace.books.iter().collect();
                let log = allocation_log(&books, scenario.horizon);
                emit_outputs(Output::Allocation(&log), path, c.format)?;
            }
            Ok(())
        }
        Command::Sweep(c) => {
            let scenario = c.spec()?.build()?;
            let t = &scenario.trigger;
            let summary = monte_carlo_sweep(
                &scenario,
                t.kind,
                t.horizon_m,
                &t.cost_grid,
                scenario.runs,
                scenario.seed,
            )?;
            c.write(Output::Sweep(&summary))
        }
        Command::Schedule(c) => {
            let scenario = c.spec()?.build()?;
            let cost = scenario.trigger.cost.clone();
            let stdout = std::io::stdout();
            let mut out = stdout.lock();
            let io = |e| Error::Io {
                path: PathBuf::from("<stdout>"),
                source: e,
            };
            writeln!(out, "agent,trigger,interval").map_err(io)?;
            for (i, model) in scenario.agents.iter().enumerate() {
                let sys = model.nominal().clone();
                let mut g = GSequence::new(&sys, scenario.law.own_gain(i))?;
                // The filter variance does not depend on communication, so one
                // schedule from k = 0 gives the anchor at every trigger.
                let mut full = VarianceSchedule::new(sys.clone(), 0, model.x0_cov.clone())?;
                let mut last = 1;
                while last <= scenario.horizon {
                    full.ensure(last)?;
                    let mut anchored =
                        VarianceSchedule::new(sys.clone(), last, full.posterior(last)?.clone())?;
                    let m = match st_next_trigger(
                        last,
                        &mut anchored,
                        &mut g,
                        &cost,
                        scenario.trigger.m_cap,
                    )? {
                        StOutcome::Interval(m) => m,
                        StOutcome::CapExceeded => scenario.trigger.m_cap,
                    };
                    writeln!(out, "{i},{last},{m}").map_err(io)?;
                    last += m;
                }
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        // A closed downstream pipe (`| head`) is not a failure.
        Err(Error::Io { source, .. }) if source.kind() == std::io::ErrorKind::BrokenPipe => {
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
