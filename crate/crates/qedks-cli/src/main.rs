use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qedks_cli::scenario::{Scenario, Task};
use qedks_cli::{tasks, CliError};

#[derive(Parser)]
#[command(
    name = "qedks",
    version,
    about = "Lattice fermion-photon dynamics: simulation, inversion and Kohn-Sham runs",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file (structured text).
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory for artifacts.
    #[arg(long)]
    out: PathBuf,
    /// Concurrency bound for sweeps; defaults to the available parallelism.
    #[arg(long)]
    jobs: Option<usize>,
    /// Tolerance overrides of the form key=val; repeatable.
    #[arg(long = "tol-override", value_name = "KEY=VAL")]
    tol_override: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Propagate the interacting system and store the conjugate pair.
    Simulate(RunArgs),
    /// Construct effective fields reproducing the interacting trajectory.
    Invert(RunArgs),
    /// Run the orbital + classical-field auxiliary system.
    Ks(RunArgs),
    /// Construct the Taylor coefficients of the effective fields at t0.
    Taylor(RunArgs),
    /// Evaluate the invariant table for a scenario.
    Verify(RunArgs),
    /// Run a parameter sweep with convergence fits.
    Sweep(RunArgs),
}

fn execute(task: Task, args: &RunArgs) -> Result<(), CliError> {
    let mut scenario = Scenario::from_path(&args.scenario)?;
    for spec in &args.tol_override {
        scenario.tolerances.apply_override(spec)?;
    }
    let jobs = args
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if jobs == 0 {
        return Err(CliError::Schema("--jobs must be >= 1".into()));
    }
    let manifest = tasks::run(task, &scenario, &args.out, jobs)?;
    println!(
        "{task}: ok ({} invariants, hash {})",
        manifest.invariants.len(),
        &manifest.scenario_hash[..12]
    );
    for w in &manifest.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (task, args) = match &cli.command {
        Command::Simulate(a) => (Task::Simulate, a),
        Command::Invert(a) => (Task::Invert, a),
        Command::Ks(a) => (Task::Ks, a),
        Command::Taylor(a) => (Task::Taylor, a),
        Command::Verify(a) => (Task::Verify, a),
        Command::Sweep(a) => (Task::Sweep, a),
    };
    match execute(task, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
