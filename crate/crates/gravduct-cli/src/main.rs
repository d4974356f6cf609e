//! Command-line front end for the duct-flow solver.
//!
//! ```text
//!   gravduct <subcommand> --config <path> [--out <dir>] [--grid N1xN2] [--sigma X]
//!
//!   background   integrate the 1D background, export profiles and margins
//!   phase        sample energy level sets of the background phase plane
//!   solve        run the nonlinear solver and export the flow fields
//!   verify       run the built-in verification battery
//!   stability    shrink the data and measure the linear response
//!   uniqueness   compare fixed points from distinct starting guesses
//! ```
//!
//! Every run writes `summary.json` (schema_version 1) into the output
//! directory, recording the SHA-256 of the config file, the effective grid
//! and data, convergence history and residuals. Outputs are deterministic:
//! the same config and flags produce byte-identical artifacts.
//!
//! Exit codes: 0 success; 2 configuration error; 3 duct longer than the
//! sonic lifespan; 4 iteration or linear-solve failure; 5 verification or
//! admissibility failure.

mod commands;
mod config;
mod output;

use clap::{Args, Parser, Subcommand};

use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "gravduct",
    version,
    about = "Steady subsonic flow of a self-gravitating gas in a duct"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the 1D background and report conservation and margins
    Background(RunArgs),
    /// Sample energy level sets of the background phase plane
    Phase(RunArgs),
    /// Run the nonlinear solver and export the flow fields
    Solve(RunArgs),
    /// Run the built-in verification battery
    Verify(RunArgs),
    /// Shrink the boundary data and measure the response
    Stability(RunArgs),
    /// Compare converged states from distinct starting guesses
    Uniqueness(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Path to the TOML run configuration
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if absent (default: current directory)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Grid override, e.g. 128x64
    #[arg(long)]
    grid: Option<String>,
    /// Data amplitude override
    #[arg(long)]
    sigma: Option<f64>,
}

fn run(command: &Command) -> Result<String, commands::Failure> {
    let args = match command {
        Command::Background(a)
        | Command::Phase(a)
        | Command::Solve(a)
        | Command::Verify(a)
        | Command::Stability(a)
        | Command::Uniqueness(a) => a,
    };
    let grid_override = match &args.grid {
        Some(s) => Some(config::parse_grid_flag(s)?),
        None => None,
    };
    let cfg = config::parse_config(&args.config, grid_override, args.sigma)?;
    let out_dir = args.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir)?;
    let ctx = commands::RunContext {
        cfg: &cfg,
        out_dir: &out_dir,
        grid_flag: args.grid.clone(),
        sigma_flag: args.sigma,
    };
    match command {
        Command::Background(_) => commands::background(&ctx),
        Command::Phase(_) => commands::phase(&ctx),
        Command::Solve(_) => commands::solve(&ctx),
        Command::Verify(_) => commands::verify(&ctx),
        Command::Stability(_) => commands::stability(&ctx),
        Command::Uniqueness(_) => commands::uniqueness(&ctx),
    }
}

fn main() {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(line) => println!("{line}"),
        Err(f) => {
            eprintln!("error: {}", f.message);
            std::process::exit(f.code);
        }
    }
}
