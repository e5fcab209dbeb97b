use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use steincv::bench::{self, BenchmarkConfig, BenchmarkReport, Method, MethodOptions, ReportFormat};
use steincv::{load_scored_samples, ProblemSpec, SplitPolicy};

#[derive(Parser)]
#[command(name = "steincv", version, about = "Stein control variate benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a benchmark described by a JSON config file.
    Bench {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run one method on one problem.
    Run {
        /// Problem JSON, inline or a file path.
        #[arg(long)]
        problem: String,
        #[arg(long)]
        method: Method,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 500)]
        m: usize,
        #[arg(long, default_value_t = 20)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Report path; `.json` selects JSON, anything else CSV. Defaults to stdout CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate an integral from a CSV of states, scores and f values.
    Ingest {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        method: Method,
        /// Training rows; defaults to half the file.
        #[arg(long)]
        m: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Train and estimate on every row.
        #[arg(long)]
        same_set: bool,
    },
}

fn parse_problem(arg: &str) -> Result<ProblemSpec, String> {
    let text = if arg.trim_start().starts_with('{') {
        arg.to_string()
    } else {
        std::fs::read_to_string(arg).map_err(|e| format!("{arg}: {e}"))?
    };
    serde_json::from_str(&text).map_err(|e| format!("problem JSON: {e}"))
}

fn format_for(path: &Path) -> ReportFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => ReportFormat::Json,
        _ => ReportFormat::Csv,
    }
}

fn finish(report: &BenchmarkReport, out: Option<&Path>, format: ReportFormat) -> Result<ExitCode, String> {
    match out {
        Some(path) => bench::emit_report(report, format, path).map_err(|e| e.to_string())?,
        None => match format {
            ReportFormat::Csv => bench::write_csv(report, std::io::stdout().lock()).map_err(|e| e.to_string())?,
            ReportFormat::Json => println!("{}", serde_json::to_string_pretty(report).map_err(|e| e.to_string())?),
        },
    }
    let mae = report.mae.map_or("n/a".to_string(), |v| format!("{v:.6e}"));
    eprintln!(
        "{} on {} (d={}): MAE {mae}, mean train {:.3e}s, {} of {} repetitions failed",
        report.config.method,
        report.problem,
        report.d,
        report.mean_train_seconds,
        report.failures,
        report.repetitions.len()
    );
    for r in report.repetitions.iter().filter(|r| r.error.is_some()) {
        eprintln!("  rep {} (seed {}): {}", r.rep, r.seed, r.error.as_deref().unwrap_or(""));
    }
    Ok(if report.failures > 0 { ExitCode::from(2) } else { ExitCode::SUCCESS })
}

fn run(cli: Cli) -> Result<ExitCode, String> {
    match cli.command {
        Command::Bench { config } => {
            let text = std::fs::read_to_string(&config).map_err(|e| format!("{}: {e}", config.display()))?;
            let cfg: BenchmarkConfig = serde_json::from_str(&text).map_err(|e| format!("config JSON: {e}"))?;
            let report = bench::run_benchmark(&cfg).map_err(|e| e.to_string())?;
            finish(&report, cfg.output.as_deref(), cfg.format)
        }
        Command::Run {
            problem,
            method,
            n,
            m,
            reps,
            seed,
            out,
        } => {
            let mut cfg = BenchmarkConfig::new(parse_problem(&problem)?, method, n, m);
            cfg.repetitions = reps;
            cfg.seed = seed;
            let format = out.as_deref().map_or(ReportFormat::Csv, format_for);
            let report = bench::run_benchmark(&cfg).map_err(|e| e.to_string())?;
            finish(&report, out.as_deref(), format)
        }
        Command::Ingest {
            samples,
            method,
            m,
            seed,
            same_set,
        } => {
            let set = load_scored_samples(&samples, true).map_err(|e| e.to_string())?;
            let (m, split) = if same_set {
                (set.len(), SplitPolicy::SameSet)
            } else {
                (m.unwrap_or(set.len() / 2).max(1), SplitPolicy::FirstM)
            };
            let out = bench::run_on_samples(&set, method, m, split, &MethodOptions::default(), None, seed)
                .map_err(|e| e.to_string())?;
            println!("{}", serde_json::to_string_pretty(&out.result).map_err(|e| e.to_string())?);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
