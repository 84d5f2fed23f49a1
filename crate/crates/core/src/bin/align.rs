use clap::{Parser, Subcommand};
use fgo_align::bench::{emit_outputs, load_config, run_benchmark, BenchError, Method, MethodOutcome};
use fgo_align::format::Sig9;
use fgo_align::sim::{samples_to_csv, simulate, truth_to_csv};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

#[derive(Parser)]
#[command(name = "align", version, about = "Self-alignment benchmark for strapdown inertial navigation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the Monte Carlo comparison and write metrics, plot data and a summary.
    Bench {
        #[arg(long)]
        config: PathBuf,
        /// Base seed; run r uses seed + r.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma separated subset of oba, oba_kf, fgo.
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<Method>>,
        #[arg(long)]
        runs: Option<u32>,
    },
    /// Dump the raw IMU stream and ground truth of the configured scenario.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<BenchError> for Failure {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Config(_) => Failure::Config(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Bench { config, seed, out, methods, runs } => bench(&config, seed, out, methods, runs),
        Command::Simulate { config, out } => dump(&config, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}

fn read_config(path: &Path) -> Result<fgo_align::bench::RunConfig, Failure> {
    load_config(path).map_err(|e| match e {
        BenchError::Io { .. } => Failure::Config(e.to_string()),
        other => other.into(),
    })
}

fn bench(
    path: &Path,
    seed: Option<u64>,
    out: Option<PathBuf>,
    methods: Option<Vec<Method>>,
    runs: Option<u32>,
) -> Result<(), Failure> {
    let mut cfg = read_config(path)?;
    if let Some(seed) = seed {
        cfg.scenario.seed = seed;
    }
    if let Some(out) = out {
        cfg.output_dir = out;
    }
    if let Some(methods) = methods {
        cfg.methods = methods;
    }
    if let Some(runs) = runs {
        cfg.monte_carlo_runs = runs;
    }
    cfg.validate().map_err(|e| Failure::Config(e.to_string()))?;

    let started = Instant::now();
    let report = run_benchmark(&cfg)?;
    let files = emit_outputs(&report, &cfg.output_dir)?;

    for run in &report.runs {
        for m in &run.methods {
            if let MethodOutcome::Failed(msg) = &m.outcome {
                eprintln!("run {} ({}): {} failed: {msg}", run.run, run.seed, m.method);
            }
        }
    }
    println!("{:<8} {:>16} {:>12} {:>6}", "method", "window_s", "rmse_deg", "runs");
    for row in &report.metrics {
        let window = format!("{}-{}", Sig9(row.window_start_s), Sig9(row.window_end_s));
        println!("{:<8} {:>16} {:>12.4} {:>6}", row.method.name(), window, row.rmse_deg, row.runs_used);
    }
    for &m in &cfg.methods {
        let (failed, diverged) = report.excluded(m);
        if failed + diverged > 0 {
            println!("{m}: {failed} failed, {diverged} diverged runs excluded");
        }
    }
    for f in files {
        println!("wrote {}", f.display());
    }
    eprintln!("{} runs in {:.1} s", cfg.monte_carlo_runs, started.elapsed().as_secs_f64());
    Ok(())
}

fn dump(path: &Path, out: &Path) -> Result<(), Failure> {
    let cfg = read_config(path)?;
    let sim = simulate(&cfg.scenario_config(0)).map_err(|e| Failure::Config(e.to_string()))?;
    std::fs::create_dir_all(out).map_err(|e| Failure::Runtime(format!("{}: {e}", out.display())))?;
    for (name, text) in [("imu.csv", samples_to_csv(&sim.samples)), ("truth.csv", truth_to_csv(&sim.truth))] {
        let file = out.join(name);
        std::fs::write(&file, text).map_err(|e| Failure::Runtime(format!("{}: {e}", file.display())))?;
        println!("wrote {}", file.display());
    }
    Ok(())
}
