//! Command-line driver for the rotating drop wave solvers.

mod artifacts;
mod commands;
mod config;
mod failure;
mod verify;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::RunConfig;
use crate::failure::Outcome;

#[derive(Parser)]
#[command(name = "dropwaves", version, about = "Rotating capillary waves on a liquid drop")]
struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Only warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// TOML file with [physics], [discretization], [solver], [evolution], [output].
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Overrides `[output] dir`.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Resonance set and bifurcation frequency of a seed mode.
    Resonance {
        #[arg(long)]
        l0: usize,
        #[arg(long, allow_negative_numbers = true)]
        m0: i64,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        /// Also report resonant pairs above this degree.
        #[arg(long)]
        l_max: Option<usize>,
    },
    /// Blocks of the linearized operator, its kernel and conditioning.
    Linearize {
        #[arg(long)]
        l0: usize,
        #[arg(long, allow_negative_numbers = true)]
        m0: i64,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, default_value_t = 8)]
        l_max: usize,
        /// Frequency of the operator; defaults to the bifurcation frequency.
        #[arg(long)]
        omega: Option<f64>,
        #[arg(long, default_value_t = 2.0)]
        sobolev_s: f64,
    },
    /// Continue a branch of rotating waves in the angular momentum.
    Solve(RunArgs),
    /// Integrate the time-dependent problem.
    Evolve(RunArgs),
    /// Multi-start solves at fixed angular momentum, grouped into orbits.
    Scan(RunArgs),
    /// Run the invariant suite and write a pass/fail report.
    Verify(RunArgs),
    /// Plot series and surface profiles from a branch file.
    Plotdata {
        branch: PathBuf,
        #[arg(long)]
        omega0: Option<f64>,
        #[arg(short, long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 2.0)]
        sobolev_s: f64,
        #[arg(long, default_value_t = 256)]
        samples: usize,
    },
}

fn load(args: &RunArgs) -> Outcome<(RunConfig, PathBuf)> {
    let cfg = RunConfig::load(args.config.as_deref())?;
    let out = args.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    Ok((cfg, out))
}

fn init_logging(cli: &Cli, config_level: Option<u8>) {
    let level = if cli.quiet { 0 } else { config_level.unwrap_or(1).saturating_add(cli.verbose) };
    let filter = match level {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(filter).format_timestamp(None).init();
}

/// Pretty JSON on stdout; a closed pipe is not an error.
fn emit(value: &serde_json::Value) -> Outcome {
    let mut out = std::io::stdout().lock();
    let written = serde_json::to_writer_pretty(&mut out, value)
        .map_err(std::io::Error::from)
        .and_then(|()| writeln!(out));
    match written {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn run(cli: &Cli) -> Outcome {
    match &cli.command {
        Command::Resonance { l0, m0, sigma, l_max } => {
            init_logging(cli, None);
            emit(&commands::resonance(*l0, *m0, *sigma, *l_max)?)?;
        }
        Command::Linearize { l0, m0, sigma, l_max, omega, sobolev_s } => {
            init_logging(cli, None);
            emit(&commands::linearize(*l0, *m0, *sigma, *l_max, *omega, *sobolev_s)?)?;
        }
        Command::Solve(args) | Command::Evolve(args) | Command::Scan(args) | Command::Verify(args) => {
            let loaded = load(args);
            init_logging(cli, loaded.as_ref().ok().map(|(c, _)| c.output.verbosity));
            let (cfg, out) = loaded?;
            match &cli.command {
                Command::Solve(_) => commands::solve(&cfg, &out)?,
                Command::Evolve(_) => commands::run_evolve(&cfg, &out)?,
                Command::Scan(_) => commands::scan(&cfg, &out)?,
                _ => verify::verify(&cfg, commands::env_threads(), &out)?,
            }
        }
        Command::Plotdata { branch, omega0, out, sobolev_s, samples } => {
            init_logging(cli, None);
            commands::plotdata(branch, *omega0, out.clone(), *sobolev_s, *samples)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
