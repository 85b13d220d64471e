//! `mfgame`: equilibria of monotone-follower games from a TOML config.

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::CliError;

const CONFIG_HELP: &str = r#"CONFIGURATION (TOML)

[tree]         kind = "binary" | "chain" | "product"   (default "binary")
               depth, dt, up_prob (default 0.5), factors (product trees, default 1)
               seed                                      (required; drives all sampling)
[players]      count, dim (default 1)
[players.running], [players.terminal]
               family = "zero" | "quadratic" | "exponential"
               weight (1), interaction (0), target (0), target_slope ([])
               quadratic: weight · |a^i − interaction · Σ_{j≠i} a^j − target − target_slope·l|²
               exponential: e^{−a^i}(2 − e^{−a^j}), two scalar players only
[[players.overrides]]
               player, optional running / terminal tables, optional constant price
[processes]    price = { family = "constant", value }
                     | { family = "gbm", value, mu, sigma, factor }
               exogenous = { family = "zero" } | { family = "constant", value }
                         | { family = "drifted_brownian", l0, drift, vol, factor }
               coercivity = "costs" | "price"; price_floor (with "price": f ≥ price_floor > 0)
               with "costs", validate also probes terminal-cost growth (a warning only)
[admissible]   mode = "monotone" | "fuel" | "lipschitz"
               cap (fuel), n (lipschitz), n_schedule (sweep; strictly increasing)
[solver]       grad_tol, max_iters, outer_tol, max_outer, momentum, divergence_cap,
               inner_tol_start, warm_start, certify_budget, payoff_tol
[checks]       samples (1000), tol (1e-8), l_range ([-2, 2]), a_range ([0, 4])
[output]       directory ("mfgame-out"), formats (["csv", "json"])
[sdg]          players = [{ dynamics = { kind = "gbm", mu, sigma }
                                     | { kind = "ou", theta, mu, sigma },
                            x0, noise_factor }, ...]
               raw costs come from [players]; states replace controls in their arguments

The output directory is taken from --out, then MFGAME_OUTPUT_DIR, then [output].

EXIT CODES
  0  success
  1  check failure or solver failure (including coercivity failure)
  2  usage or configuration error"#;

#[derive(Debug, Parser)]
#[command(name = "mfgame", version, about = "Nash equilibria of submodular monotone-follower games on scenario trees", after_long_help = CONFIG_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct OutArgs {
    /// Output directory.
    #[arg(long, env = "MFGAME_OUTPUT_DIR")]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check convexity, decreasing differences and the price floor.
    Validate { config: PathBuf },
    /// Compute the least (or greatest) Nash equilibrium.
    Solve {
        config: PathBuf,
        #[command(flatten)]
        out: OutArgs,
        /// Solve even if validation fails.
        #[arg(long)]
        force: bool,
        /// Iterate downward from the top of a bounded set.
        #[arg(long)]
        greatest: bool,
    },
    /// Solve the rate-bounded games along admissible.n_schedule.
    Sweep {
        config: PathBuf,
        #[command(flatten)]
        out: OutArgs,
        #[arg(long)]
        force: bool,
        /// Start every rate from the zero profile.
        #[arg(long)]
        cold_start: bool,
    },
    /// Solve a controlled GBM / OU game through the change of variables.
    Sdg {
        config: PathBuf,
        #[command(flatten)]
        out: OutArgs,
        #[arg(long)]
        force: bool,
    },
    /// Compare gradient best replies with exhaustive grid search.
    OracleCompare {
        config: PathBuf,
        #[command(flatten)]
        out: OutArgs,
        #[arg(long, default_value_t = 1.0 / 64.0)]
        grid_step: f64,
        /// Level bound for the grid when the set itself is unbounded.
        #[arg(long)]
        level_cap: Option<f64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate { config } => commands::validate(&config),
        Command::Solve { config, out, force, greatest } => commands::solve(&config, out.out, force, greatest),
        Command::Sweep { config, out, force, cold_start } => commands::sweep(&config, out.out, force, cold_start),
        Command::Sdg { config, out, force } => commands::sdg(&config, out.out, force),
        Command::OracleCompare { config, out, grid_step, level_cap } => {
            commands::oracle_compare(&config, out.out, grid_step, level_cap)
        }
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(CliError::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(CliError::Domain(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
