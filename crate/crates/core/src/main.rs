use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ridgeless::experiments::config::{ExperimentConfig, ExperimentKind};
use ridgeless::experiments::{emit_plot, run_experiment};
use ridgeless::{Error, Result};

#[derive(Parser)]
#[command(name = "ridgeless", version, about = "Kernel interpolation sweeps and diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Variance (and bias) of the minimum-norm interpolant over an (n, d) grid.
    Descent(RunArgs),
    /// Rank and eigenvalue floor of truncated kernel matrices.
    Spectral(RunArgs),
    /// Small-ball probabilities and L4/L2 ratios for random directions.
    Smallball(RunArgs),
    /// Finite-width tangent kernel against its infinite-width limit.
    NtkCheck(RunArgs),
    /// Rate exponent over alpha = log d / log n.
    RateCurve(RunArgs),
    /// SVG of a descent CSV.
    Plot(PlotArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// CSV destination; overrides `out_csv`. Stdout when neither is set.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for grid cells (default: available cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Overrides `master_seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct PlotArgs {
    /// Descent config; supplies `out_csv`, `out_svg`, `n` and `iota_max`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Descent CSV to read; overrides the config's `out_csv`.
    #[arg(long)]
    input: Option<PathBuf>,
    /// SVG destination; overrides the config's `out_svg`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Sample size for the peak overlay; defaults to the config or the CSV.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    iota_max: Option<u32>,
}

fn load(path: &Path, kind: ExperimentKind, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_path(path)?;
    if cfg.experiment != kind {
        return Err(Error::Config(format!(
            "{} describes '{}', not '{}'",
            path.display(),
            cfg.experiment.as_str(),
            kind.as_str()
        )));
    }
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    Ok(cfg)
}

fn run(args: &RunArgs, kind: ExperimentKind) -> Result<()> {
    let cfg = load(&args.config, kind, args.seed)?;
    let threads = args
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if threads == 0 {
        return Err(Error::Usage("--threads must be >= 1".into()));
    }
    match args.out.as_ref().or(cfg.out_csv.as_ref()) {
        Some(path) => {
            let file = File::create(path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
            run_experiment(&cfg, threads, BufWriter::new(file))
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            run_experiment(&cfg, threads, &mut lock)?;
            lock.flush().map_err(|e| Error::Io { path: "<stdout>".into(), source: e })
        }
    }
}

fn plot(args: &PlotArgs) -> Result<()> {
    let cfg = match &args.config {
        Some(p) => Some(load(p, ExperimentKind::Descent, None)?),
        None => None,
    };
    let input = args
        .input
        .clone()
        .or_else(|| cfg.as_ref().and_then(|c| c.out_csv.clone()))
        .ok_or_else(|| Error::Usage("plot needs --input or a config with out_csv".into()))?;
    let out = args
        .out
        .clone()
        .or_else(|| cfg.as_ref().and_then(|c| c.out_svg.clone()))
        .ok_or_else(|| Error::Usage("plot needs --out or a config with out_svg".into()))?;
    let n = args.n.or_else(|| {
        cfg.as_ref()
            .and_then(|c| c.sample_sizes().first().copied())
    });
    let iota_max = args.iota_max.or(cfg.as_ref().map(|c| c.iota_max)).unwrap_or(3);
    emit_plot(&input, &out, n, iota_max)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Descent(a) => run(a, ExperimentKind::Descent),
        Command::Spectral(a) => run(a, ExperimentKind::Spectral),
        Command::Smallball(a) => run(a, ExperimentKind::Smallball),
        Command::NtkCheck(a) => run(a, ExperimentKind::NtkCheck),
        Command::RateCurve(a) => run(a, ExperimentKind::RateCurve),
        Command::Plot(a) => plot(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ridgeless: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
