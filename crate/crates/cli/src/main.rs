//! `infogame`: solve, simulate, check, convexify and oracle subcommands.

mod commands;
mod config;
mod error;
mod output;

use clap::{Args, Parser, Subcommand};
use commands::{EnvelopeMode, NoiseArg, SimulateOptions};
use config::SolverSettings;
use error::{CliError, CliResult};
use std::path::PathBuf;
use std::process::ExitCode;

pub const THREADS_ENV: &str = "INFOGAME_THREADS";

#[derive(Parser)]
#[command(
    name = "infogame",
    version,
    about = "Dual HJI solver and simulator for differential games with asymmetric information"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the dual equation backward from T and write the value slices.
    Solve(SolveArgs),
    /// Estimate J^{p,q} by Monte Carlo for a strategy profile.
    Simulate(SimulateArgs),
    /// Evaluate dual sub/supersolution residuals of a solved stack.
    Check(CheckArgs),
    /// Lower convex (or upper concave) envelope of a tabulated simplex function.
    Convexify(ConvexifyArgs),
    /// Exact tree computations on a small discrete version of the game.
    Oracle(OracleArgs),
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    config: PathBuf,
    /// State spacing (alternative to --nx).
    #[arg(long)]
    dx: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    /// State nodes per dimension.
    #[arg(long)]
    nx: Option<usize>,
    /// Simplex resolution for Δ(I).
    #[arg(long)]
    np: Option<usize>,
    /// Simplex resolution for Δ(J).
    #[arg(long)]
    nq: Option<usize>,
    #[arg(long)]
    t0: Option<f64>,
    /// Lower edge of the state box (default: -domain).
    #[arg(long, allow_hyphen_values = true)]
    lo: Option<f64>,
    /// Upper edge of the state box (default: domain).
    #[arg(long, allow_hyphen_values = true)]
    hi: Option<f64>,
    #[arg(long, default_value = "infogame-solve")]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Prior over player I's types, e.g. "1/3,2/3" (default uniform).
    #[arg(long)]
    p: Option<String>,
    /// Prior over player II's types (default uniform).
    #[arg(long)]
    q: Option<String>,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Euler step (default T/100).
    #[arg(long)]
    h: Option<f64>,
    /// Strategy delay, a multiple of h (default h).
    #[arg(long)]
    delta: Option<f64>,
    /// constant, constant:<k>, preset:<name> or feedback:<solve-dir>.
    #[arg(long, default_value = "constant")]
    strategy: String,
    /// Player II's strategy when it differs from --strategy.
    #[arg(long)]
    strategy_ii: Option<String>,
    /// Initial state, comma separated (default origin).
    #[arg(long, allow_hyphen_values = true)]
    x0: Option<String>,
    #[arg(long, value_enum, default_value = "gaussian")]
    noise: NoiseArg,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    /// Output directory of a previous solve.
    #[arg(long)]
    solution: PathBuf,
    #[arg(long)]
    tol: Option<f64>,
    /// Report path (default <solution>/check.json).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ConvexifyArgs {
    /// CSV with columns p_1..p_I and a value column.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "vex")]
    mode: EnvelopeMode,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    h: Option<f64>,
    /// Resolution of the p lattice for the one-sided recursion.
    #[arg(long, default_value_t = 8)]
    pgrid: usize,
    #[arg(long, allow_hyphen_values = true)]
    x0: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| CliError::Config(format!("{THREADS_ENV}={raw:?} is not a count")))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot size the thread pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    match cli.command {
        Command::Solve(a) => {
            let overrides = SolverSettings {
                nx: a.nx,
                dx: a.dx,
                np: a.np,
                nq: a.nq,
                dt: a.dt,
                t0: a.t0,
                lo: a.lo,
                hi: a.hi,
            };
            commands::run_solve(&a.config, &overrides, &a.out).map(|_| ())
        }
        Command::Simulate(a) => commands::run_simulate(&SimulateOptions {
            config: a.config,
            p: a.p,
            q: a.q,
            samples: a.samples,
            seed: a.seed,
            h: a.h,
            delta: a.delta,
            strategy: a.strategy,
            strategy_ii: a.strategy_ii,
            x0: a.x0,
            noise: a.noise,
            out: a.out,
        }),
        Command::Check(a) => commands::run_check(&a.solution, a.tol, a.out.as_deref()).map(|_| ()),
        Command::Convexify(a) => commands::run_convexify(&a.input, &a.out, a.mode),
        Command::Oracle(a) => commands::run_oracle(
            &a.config,
            a.steps,
            a.h,
            a.pgrid,
            a.x0.as_deref(),
            a.out.as_deref(),
        ),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
