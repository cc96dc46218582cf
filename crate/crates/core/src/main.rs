use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};

use ssl_dirac::config::load_config;
use ssl_dirac::run::{resolve_workers, run, Command, WORKERS_ENV};
use ssl_dirac::solver::Orientation;

#[derive(Parser)]
#[command(
    name = "ssl-dirac",
    version,
    about = "Dirac / Jackiw-Rebbi slow-light spinor simulations"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Evolve the initial field and write snapshots and norms.
    Evolve(RunArgs),
    /// Storage-time sweep of the component intensities.
    Sweep(RunArgs),
    /// Compare plane-wave phase frequencies with the Dirac dispersion.
    DispersionCheck(RunArgs),
    /// Evolve the zero mode and report its deviation.
    ZeroMode(RunArgs),
    /// Zero-mode overlap as a function of the relative phase.
    Overlap(RunArgs),
    /// Oscillation contrast over a ladder of mass slopes.
    Suppress(RunArgs),
    /// Fit Φ and the amplitude ratio to a measured series.
    Fit(RunArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum OrientationArg {
    Paper,
    Intuitive,
}

#[derive(Args)]
struct RunArgs {
    /// TOML config, or a manifest from an earlier run.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, env = WORKERS_ENV)]
    workers: Option<usize>,
    /// Overrides physics.orientation.
    #[arg(long, value_enum)]
    orientation: Option<OrientationArg>,
}

fn execute(command: Command, args: RunArgs) -> anyhow::Result<()> {
    let mut config = load_config(&args.config).with_context(|| format!("loading {}", args.config.display()))?;
    if let Some(o) = args.orientation {
        config.physics.orientation = match o {
            OrientationArg::Paper => Orientation::Paper,
            OrientationArg::Intuitive => Orientation::Intuitive,
        };
    }
    let workers = resolve_workers(args.workers)?;
    let manifest = run(&config, command, &args.out_dir, workers)?;
    for name in &manifest.outputs {
        println!("{}", args.out_dir.join(name).display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Cmd::Evolve(a) => (Command::Evolve, a),
        Cmd::Sweep(a) => (Command::Sweep, a),
        Cmd::DispersionCheck(a) => (Command::DispersionCheck, a),
        Cmd::ZeroMode(a) => (Command::ZeroMode, a),
        Cmd::Overlap(a) => (Command::Overlap, a),
        Cmd::Suppress(a) => (Command::Suppress, a),
        Cmd::Fit(a) => (Command::Fit, a),
    };
    match execute(command, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
