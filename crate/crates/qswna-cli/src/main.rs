mod commands;
mod plot;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use qswna::ModelParams;
use serde_json::json;

use commands::*;
use report::{Artifacts, RunManifest};

/// Weakly nonlinear analysis and PDE checks for the quorum-sensing motility model.
#[derive(Parser, Debug)]
#[command(name = "qswna", version, about)]
struct Cli {
    /// parameter file (TOML, or JSON with a .json extension); defaults are used without it
    #[arg(long, global = true)]
    params: Option<PathBuf>,
    /// output directory
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// worker threads, 0 for all cores
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// seed for randomised initial perturbations
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// override epsilon from the parameter file
    #[arg(long, global = true, allow_hyphen_values = true)]
    epsilon: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Uniform steady states (c*, u*, N)
    SteadyState,
    /// Growth rates of the cos modes from the cubic dispersion relation
    Dispersion(DispersionArgs),
    /// Leading-order critical D'_* for a mode
    Critical(CriticalArgs),
    /// Series coefficient tables
    Series(SeriesArgs),
    /// Weakly nonlinear coefficients, mu and b
    Wna,
    /// Time-step the PDE from a perturbed uniform state
    Simulate(SimulateArgs),
    /// Relax to a steady state and polish it with Newton
    Steady(SteadyArgs),
    /// Detect the pitchfork, trace both branches and fit b
    Continue(ContinueArgs),
    /// Error of the detected bifurcation and of b against epsilon
    EpsilonSweep(EpsilonSweepArgs),
    /// Order parameter over a (rho*, D'_*) grid
    PhaseDiagram(PhaseArgs),
    /// Late-term, optimal truncation and Stokes smoothing studies
    Stokes(StokesArgs),
    /// Theory summary: critical curve, mu against rho*, coefficients
    Report,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::SteadyState => "steady-state",
            Command::Dispersion(_) => "dispersion",
            Command::Critical(_) => "critical",
            Command::Series(_) => "series",
            Command::Wna => "wna",
            Command::Simulate(_) => "simulate",
            Command::Steady(_) => "steady",
            Command::Continue(_) => "continue",
            Command::EpsilonSweep(_) => "epsilon-sweep",
            Command::PhaseDiagram(_) => "phase-diagram",
            Command::Stokes(_) => "stokes",
            Command::Report => "report",
        }
    }
}

fn load_params(cli: &Cli) -> Result<ModelParams> {
    let mut p = match &cli.params {
        Some(path) => ModelParams::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => ModelParams::default(),
    };
    if let Some(e) = cli.epsilon {
        p.epsilon = e;
        p.validate()?;
    }
    Ok(p)
}

fn run(cli: &Cli) -> Result<()> {
    let started_at = chrono::Utc::now().to_rfc3339();
    let params = load_params(cli)?;
    let ctx = Ctx { params, seed: cli.seed, threads: cli.threads };
    let mut out = Artifacts::new(&cli.out)?;
    let settings = qswna::exec::with_threads(cli.threads, || -> Result<serde_json::Value> {
        let out = &mut out;
        match &cli.command {
            Command::SteadyState => steady_state(&ctx, out),
            Command::Dispersion(a) => dispersion(&ctx, a, out),
            Command::Critical(a) => critical(&ctx, a, out),
            Command::Series(a) => series(&ctx, a, out),
            Command::Wna => wna(&ctx, out),
            Command::Simulate(a) => simulate(&ctx, a, out),
            Command::Steady(a) => steady(&ctx, a, out),
            Command::Continue(a) => continuation(&ctx, a, out),
            Command::EpsilonSweep(a) => epsilon_sweep(&ctx, a, out),
            Command::PhaseDiagram(a) => phase_diagram(&ctx, a, out),
            Command::Stokes(a) => stokes(&ctx, a, out),
            Command::Report => report(&ctx, out),
        }
    })?;
    let manifest = RunManifest {
        tool: "qswna".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        subcommand: cli.command.name().into(),
        args: std::env::args().skip(1).collect(),
        config: ctx.params.clone(),
        settings: if settings.is_null() { json!({}) } else { settings },
        seed: cli.seed,
        threads: cli.threads,
        started_at,
        finished_at: chrono::Utc::now().to_rfc3339(),
        outputs: Vec::new(),
    };
    out.finish(manifest)?;
    Ok(())
}

/// 2 for configuration problems, 3 for numerical failures.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<qswna::Error>() {
        Some(e) if e.is_config() => 2,
        Some(_) => 3,
        None if err.downcast_ref::<std::io::Error>().is_some() => 2,
        None => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
