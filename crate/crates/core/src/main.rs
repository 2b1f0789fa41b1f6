use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use abmrc::harness::bench::{bench_preset, run_bench, threads_from_env, write_bench_csv, BenchGrid};
use abmrc::harness::config::{preset, ExperimentConfig, Strategy};
use abmrc::harness::run::{run_experiment, RunSummary};
use abmrc::model::InfluenceKernel;
use abmrc::Error;

/// `println!` that tolerates a closed stdout pipe.
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

const EXIT_CONSENSUS: u8 = 0;
const EXIT_CONFIG: u8 = 1;
const EXIT_EXHAUSTED: u8 = 2;
const EXIT_FAILED: u8 = 3;

#[derive(Parser)]
#[command(name = "abmrc", version, about = "Consensus control of agent-based opinion models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the uncontrolled model.
    Simulate(RunArgs),
    /// Run a controlled strategy (two-level by default).
    Control(RunArgs),
    /// Time strategies over a (d, N) grid and write bench.table.csv.
    Bench(BenchArgs),
    /// Summarize the run summaries found in a directory.
    Report {
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run every experiment of a built-in preset (regimes, population, dimension, large).
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    name: Option<String>,
    #[arg(short = 'n', long = "agents")]
    agents: Option<usize>,
    #[arg(short = 'd', long = "dim")]
    dim: Option<usize>,
    /// Sharpness of the smoothed GHK kernel.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_steps: Option<usize>,
}

#[derive(Args)]
struct BenchArgs {
    /// JSON bench grid.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in grid: population, strategies, pod or dimension.
    #[arg(long, conflicts_with = "config", default_value = "strategies")]
    preset: String,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

fn load_grid(path: &Path) -> abmrc::Result<BenchGrid> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn experiments(args: &RunArgs, default_strategy: Strategy) -> abmrc::Result<Vec<ExperimentConfig>> {
    let mut cfgs = match (&args.config, &args.preset) {
        (Some(path), _) => vec![ExperimentConfig::load(path)?],
        (None, Some(name)) => preset(name)?,
        (None, None) => vec![ExperimentConfig {
            strategy: default_strategy,
            ..Default::default()
        }],
    };
    if default_strategy == Strategy::Uncontrolled {
        cfgs.retain(|c| c.strategy == Strategy::Uncontrolled || args.preset.is_none());
    }
    for cfg in &mut cfgs {
        if default_strategy == Strategy::Uncontrolled {
            cfg.strategy = Strategy::Uncontrolled;
        }
        if let Some(s) = &args.strategy {
            cfg.strategy = s.parse()?;
        }
        if let Some(seed) = args.seed {
            cfg.seed = seed;
        }
        if let Some(dir) = &args.out_dir {
            cfg.out_dir = dir.clone();
        }
        if let Some(name) = &args.name {
            cfg.name = name.clone();
        }
        if let Some(n) = args.agents {
            cfg.agents = n;
        }
        if let Some(d) = args.dim {
            cfg.dim = d;
        }
        if let Some(alpha) = args.alpha {
            cfg.kernel = InfluenceKernel::SmoothedGhk { alpha };
        }
        if let Some(tol) = args.tol {
            cfg.control.consensus_tol = tol;
        }
        if let Some(steps) = args.max_steps {
            cfg.control.max_outer_steps = steps;
        }
        cfg.validate()?;
    }
    Ok(cfgs)
}

fn run(args: &RunArgs, default_strategy: Strategy) -> u8 {
    let cfgs = match experiments(args, default_strategy) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let mut code = EXIT_CONSENSUS;
    for cfg in &cfgs {
        match run_experiment(cfg) {
            Ok((report, art)) => {
                out!(
                    "{:<28} {:<12} consensus={} T={:.3} X={:.3e} wall={:.1}ms -> {}",
                    cfg.name,
                    cfg.strategy.name(),
                    report.consensus_reached,
                    report.final_time,
                    report.final_consensus().unwrap_or(f64::NAN),
                    report.total_wall_ms,
                    art.summary.display()
                );
                if !report.consensus_reached {
                    code = code.max(EXIT_EXHAUSTED);
                }
            }
            Err(e) => {
                eprintln!("{}: {e}", cfg.name);
                code = EXIT_FAILED;
            }
        }
    }
    code
}

fn bench(args: &BenchArgs) -> u8 {
    let grid = match &args.config {
        Some(path) => load_grid(path),
        None => bench_preset(&args.preset, 3),
    };
    let mut grid = match grid {
        Ok(g) => g,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    if let Some(r) = args.repeats {
        grid.repeats = r;
    }
    let cells = match run_bench(&grid, threads_from_env()) {
        Ok(c) => c,
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
        Err(e) => {
            eprintln!("bench failed: {e}");
            return EXIT_FAILED;
        }
    };
    if let Err(e) = std::fs::create_dir_all(&args.out_dir)
        .map_err(Error::from)
        .and_then(|_| write_bench_csv(&cells, &args.out_dir.join("bench.table.csv")))
    {
        eprintln!("bench failed: {e}");
        return EXIT_FAILED;
    }
    let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.2}"));
    out!("{:>5} {:>5} {:<12} {:>12} {:>9} {:>10} {:>8}", "d", "N", "strategy", "wall_ms", "reached", "normalized", "speedup");
    for c in &cells {
        out!(
            "{:>5} {:>5} {:<12} {:>12.1} {:>9} {:>10} {:>8}",
            c.d,
            c.n,
            c.strategy.name(),
            c.wall_ms,
            c.consensus_reached,
            fmt(c.normalized_time),
            fmt(c.speedup)
        );
    }
    if cells.iter().all(|c| c.consensus_reached) {
        EXIT_CONSENSUS
    } else {
        EXIT_EXHAUSTED
    }
}

fn report(dir: &Path) -> u8 {
    let entries = match std::fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) => {
            eprintln!("error: {}: {e}", dir.display());
            return EXIT_CONFIG;
        }
    };
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(".summary.json"))
        .collect();
    paths.sort();
    let mut code = EXIT_CONSENSUS;
    for path in paths {
        let summary: RunSummary = match std::fs::read_to_string(&path)
            .map_err(Error::from)
            .and_then(|t| serde_json::from_str(&t).map_err(Error::from))
        {
            Ok(s) => s,
            Err(e) => {
                eprintln!("{}: {e}", path.display());
                code = EXIT_FAILED;
                continue;
            }
        };
        match &summary.error {
            Some(err) => {
                out!("{:<28} failed: {err}", summary.config.name);
                code = EXIT_FAILED;
            }
            None => {
                out!(
                    "{:<28} {:<12} N={:<4} d={:<4} consensus={} T={:.3} cost={:.4e} steps={} wall={:.1}ms",
                    summary.config.name,
                    summary.config.strategy.name(),
                    summary.config.agents,
                    summary.config.dim,
                    summary.consensus_reached,
                    summary.final_time,
                    summary.total_cost,
                    summary.outer_steps,
                    summary.total_wall_ms
                );
                if !summary.consensus_reached && code == EXIT_CONSENSUS {
                    code = EXIT_EXHAUSTED;
                }
            }
        }
    }
    code
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_CONSENSUS };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let code = match &cli.command {
        Command::Simulate(args) => run(args, Strategy::Uncontrolled),
        Command::Control(args) => run(args, Strategy::TwoLevel),
        Command::Bench(args) => bench(args),
        Command::Report { out_dir } => report(out_dir),
    };
    ExitCode::from(code)
}
