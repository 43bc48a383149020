use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod failure;
mod presets;

use failure::Failure;

#[derive(Parser, Debug)]
#[command(name = "nafe", version, about = "Rank-sorting panel estimators, simulations and diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate coefficient paths on a panel CSV.
    Estimate(EstimateArgs),
    /// Run a Monte Carlo study from a preset or custom grid.
    Simulate(SimulateArgs),
    /// Bootstrap standard errors of the rank-sorting estimator.
    Bootstrap(BootstrapArgs),
    /// Run one of the theory probes.
    Probe(ProbeArgs),
}

#[derive(Args, Debug, Clone)]
struct RunArgs {
    /// Output CSV; a `<out>.meta.json` run manifest is written next to it.
    #[arg(long)]
    out: PathBuf,
    /// Master seed. Drawn from the clock when omitted; always printed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on this.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// Long-format panel CSV with one row per (unit, period).
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "unit")]
    unit_col: String,
    #[arg(long, default_value = "time")]
    time_col: String,
    #[arg(long, default_value = "y")]
    y_col: String,
    /// Regressor columns (default: every other column).
    #[arg(long, value_delimiter = ',')]
    x_cols: Option<Vec<String>>,
    /// Do not prepend an intercept column.
    #[arg(long)]
    no_intercept: bool,
    /// Ranks in (0, 1).
    #[arg(long, value_delimiter = ',', value_parser = parse_tau, default_value = "0.5")]
    tau: Vec<f64>,
    /// Sorting point: `mean` or comma-separated values (the leading 1 may be left out).
    #[arg(long, default_value = "mean")]
    x_star: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Method {
    Nafe,
    Feqr,
    Fe,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SeKind {
    Bootstrap,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_delimiter = ',', default_value = "nafe")]
    method: Vec<Method>,
    /// Standard errors for the rank-sorting estimator.
    #[arg(long)]
    se: Option<SeKind>,
    /// Bootstrap replications.
    #[arg(long = "B", default_value_t = 200)]
    b: usize,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args, Debug)]
struct BootstrapArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long = "B", default_value_t = 200)]
    b: usize,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Table {
    T1,
    T2,
    T3,
    T8,
    Custom,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    table: Table,
    #[arg(long, default_value_t = 500)]
    reps: usize,
    /// baseline, rank_mixture or multiplicative.
    #[arg(long)]
    family: Option<String>,
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<usize>>,
    /// Panel lengths; exclusive with --rate.
    #[arg(long = "T", value_delimiter = ',', conflicts_with = "rate")]
    t: Option<Vec<usize>>,
    /// Panel lengths as `T = round(n^rate)`.
    #[arg(long, value_delimiter = ',')]
    rate: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    rho: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    sigma_v: Option<Vec<f64>>,
    /// Sorting points: `mean` or regressor values `c` for x* = (1, c).
    #[arg(long, value_delimiter = ',')]
    x_star: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',', value_parser = parse_tau)]
    tau: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    estimators: Option<Vec<Method>>,
    /// Skip grid entries with n·T above this.
    #[arg(long, default_value_t = 2_000_000)]
    cell_budget: usize,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Probe {
    Identification,
    Permutation,
    Spacing,
}

#[derive(Args, Debug)]
struct ProbeArgs {
    #[arg(long, value_enum)]
    which: Probe,
    /// Cross-section size (identification default 10000, permutation 100, spacing 20).
    #[arg(long)]
    n: Option<usize>,
    /// Ranks for the identification probe.
    #[arg(long, value_delimiter = ',', value_parser = parse_tau)]
    tau: Option<Vec<f64>>,
    /// Regressor value `c` of the sorting point x* = (1, c).
    #[arg(long, default_value_t = 4.5)]
    x_star: f64,
    /// Replications (permutation default 200, spacing 100000).
    #[arg(long)]
    reps: Option<usize>,
    /// Panel lengths for the permutation probe.
    #[arg(long = "T", value_delimiter = ',')]
    t: Option<Vec<usize>>,
    /// Noise levels for the permutation probe.
    #[arg(long, value_delimiter = ',')]
    sigma_v: Option<Vec<f64>>,
    /// Number of evenly spaced gap thresholds for the spacing probe.
    #[arg(long, default_value_t = 10)]
    points: usize,
    #[command(flatten)]
    run: RunArgs,
}

fn parse_tau(s: &str) -> Result<f64, String> {
    let tau: f64 = s.trim().parse().map_err(|_| format!("`{s}` is not a number"))?;
    if tau > 0.0 && tau < 1.0 {
        Ok(tau)
    } else {
        Err(format!("tau = {tau} must lie in the open interval (0, 1)"))
    }
}

fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let now = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).unwrap_or_default();
        now.as_nanos() as u64
    })
}

fn run(cli: Cli) -> Result<(), Failure> {
    let run_args = match &cli.command {
        Command::Estimate(a) => &a.run,
        Command::Simulate(a) => &a.run,
        Command::Bootstrap(a) => &a.run,
        Command::Probe(a) => &a.run,
    }
    .clone();
    let seed = resolve_seed(run_args.seed);
    println!("seed: {seed}");
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(threads) = run_args.threads {
        if threads == 0 {
            return Err(Failure::usage("--threads must be at least 1"));
        }
        pool = pool.num_threads(threads);
    }
    let pool = pool.build().map_err(|e| Failure::usage(e.to_string()))?;
    let start = Instant::now();
    let manifest = pool.install(|| match cli.command {
        Command::Estimate(a) => commands::estimate(&a, seed),
        Command::Simulate(a) => commands::simulate(&a, seed),
        Command::Bootstrap(a) => commands::bootstrap(&a, seed),
        Command::Probe(a) => commands::probe(&a, seed),
    })?;
    commands::write_manifest(&run_args.out, manifest, seed, start.elapsed())?;
    println!("wrote {}", run_args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
