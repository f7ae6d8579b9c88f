use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use cmdistill::harness::{
    extract_curve, run_experiment, run_sweep, write_curve, Curve, ExperimentConfig, RunMetrics, SweepGrid,
};
use cmdistill::labelspace::{make_blobs, write_csv};
use cmdistill::{Error, Method, NoiseKind, NoiseSpec, Result};
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "cmdistill",
    version,
    about = "Confident-knowledge mutual distillation experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a Gaussian-blobs dataset with injected label noise.
    GenData(GenData),
    /// Run one experiment from a JSON config.
    Train(Train),
    /// Run a hyper-parameter grid and write a summary CSV.
    Sweep(Sweep),
    /// Extract a plot-ready curve from a metrics file.
    Report(Report),
}

#[derive(Parser)]
struct GenData {
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 500)]
    per_class: usize,
    #[arg(long, default_value_t = 8)]
    dim: usize,
    #[arg(long, default_value_t = 0.6)]
    spread: f64,
    #[arg(long, value_enum, default_value_t = NoiseArg::Sym)]
    noise: NoiseArg,
    #[arg(long, default_value_t = 0.0)]
    rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV; generation parameters go to the same path with a `.json` extension.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum NoiseArg {
    Sym,
    Pairflip,
}

impl From<NoiseArg> for NoiseKind {
    fn from(n: NoiseArg) -> Self {
        match n {
            NoiseArg::Sym => NoiseKind::Symmetric,
            NoiseArg::Pairflip => NoiseKind::PairFlip,
        }
    }
}

#[derive(Parser)]
struct Train {
    #[arg(long)]
    config: PathBuf,
    /// Replaces the config's run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Replaces the config's output directory. Defaults to `runs/<config name>`.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Parser)]
struct Sweep {
    /// Base experiment config.
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_delimiter = ',')]
    eta: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    b2: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    noise_rate: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    method: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Directory for per-run metrics and `summary.csv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Parser)]
struct Report {
    #[arg(long)]
    metrics: PathBuf,
    #[arg(long, value_enum)]
    curve: CurveArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum CurveArg {
    Acc,
    Comm,
    Chi,
}

impl From<CurveArg> for Curve {
    fn from(c: CurveArg) -> Self {
        match c {
            CurveArg::Acc => Curve::Acc,
            CurveArg::Comm => Curve::Comm,
            CurveArg::Chi => Curve::Chi,
        }
    }
}

fn gen_data(args: GenData) -> Result<()> {
    let noise = NoiseSpec::new(args.noise.into(), args.rate, args.seed).map_err(|e| Error::Config {
        path: "rate".into(),
        message: e.to_string(),
    })?;
    let split = make_blobs::<f64>(args.classes, args.per_class, args.dim, args.spread, args.seed)
        .map_err(|e| Error::Config {
            path: "".into(),
            message: e.to_string(),
        })?
        .with_noise(noise)?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_csv(&split, &args.out)?;
    let sidecar = json!({
        "classes": args.classes,
        "per_class": args.per_class,
        "dim": args.dim,
        "spread": args.spread,
        "noise": noise.kind.as_str(),
        "rate": args.rate,
        "seed": args.seed,
        "rows": split.len(),
        "flipped_fraction": split.flipped_fraction(),
    });
    fs::write(args.out.with_extension("json"), serde_json::to_string_pretty(&sidecar)?)?;
    println!("wrote {} rows to {}", split.len(), args.out.display());
    Ok(())
}

fn default_output_dir(config: &Path) -> PathBuf {
    let stem = config
        .file_stem()
        .map_or_else(|| "run".into(), |s| s.to_string_lossy().into_owned());
    Path::new("runs").join(stem)
}

fn train(args: Train) -> Result<()> {
    let mut cfg = ExperimentConfig::from_path(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = args.output_dir {
        cfg.output_dir = Some(dir);
    } else if cfg.output_dir.is_none() {
        cfg.output_dir = Some(default_output_dir(&args.config));
    }
    let metrics = run_experiment(&cfg)?;
    let last = metrics.last().expect("validated configs run at least one epoch");
    let dir = cfg.output_dir.as_deref().unwrap_or(Path::new("."));
    println!("metrics={}", dir.join("metrics.csv").display());
    println!("final_acc_a={} final_acc_b={}", last.test_acc_a, last.test_acc_b);
    println!("final_mean_acc={}", last.mean_test_acc());
    Ok(())
}

fn sweep(args: Sweep) -> Result<()> {
    let base = ExperimentConfig::from_path(&args.config)?;
    let method = args
        .method
        .map(|names| {
            names
                .iter()
                .map(|n| n.parse::<Method>())
                .collect::<Result<Vec<_>>>()
                .map_err(|e| Error::Config {
                    path: "method".into(),
                    message: e.to_string(),
                })
        })
        .transpose()?;
    let grid = SweepGrid {
        eta: args.eta,
        b2: args.b2,
        noise_rate: args.noise_rate,
        method,
        seeds: args.seeds,
    };
    let summary = run_sweep(&base, &grid, args.workers, Some(&args.out))?;
    for cell in &summary.cells {
        for (seed, err) in &cell.failures {
            eprintln!("cell {} seed {seed} failed: {err}", cell.cell_id);
        }
    }
    let runs: usize = summary.cells.iter().map(|c| c.finals.len() + c.failures.len()).sum();
    if summary.failures() == runs {
        return Err(Error::InvalidState("every run in the sweep failed".into()));
    }
    println!("summary={}", args.out.join("summary.csv").display());
    Ok(())
}

fn report(args: Report) -> Result<()> {
    let same = match (fs::canonicalize(&args.metrics), fs::canonicalize(&args.out)) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    };
    if same {
        return Err(Error::Config {
            path: "out".into(),
            message: "output would overwrite the metrics file".into(),
        });
    }
    let metrics = RunMetrics::read_csv(&args.metrics)?;
    let points = extract_curve(&metrics, args.curve.into());
    write_curve(&points, &args.out)?;
    println!("points={}", points.len());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Sweep(a) => sweep(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
