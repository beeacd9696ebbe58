//! `chernoff` command-line runner.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chernoff::experiment::{run_to_dir, Experiment};
use chernoff::mollifier::MollifierKernel;
use chernoff::rates::{fit_rate, fit_rate_side, ErrorCurve, Verdict, DEFAULT_NOISE_MULTIPLIER, DEFAULT_SLOPE_TOLERANCE};
use chernoff::bounds::Side;
use chernoff::Error;
use clap::{Parser, Subcommand};

/// Environment variable holding the worker-thread count.
const WORKERS_VAR: &str = "CHERNOFF_WORKERS";

const EXIT_FAIL: u8 = 1;
const EXIT_INCONCLUSIVE: u8 = 2;
const EXIT_CONFIG: u8 = 3;

#[derive(Parser)]
#[command(name = "chernoff", version, about = "Chernoff approximation experiments for convex monotone semigroups")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write errors.csv, rate_report.json,
    /// bound_report.json and manifest.json.
    Run {
        config: PathBuf,
        /// Artifact directory; defaults to `<config stem>.out` next to the config.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Run the randomized structural and lemma suites for the configured operator.
    CheckInvariants { config: PathBuf },
    /// Print the theoretical bounds for a config as JSON.
    Bounds { config: PathBuf },
    /// Print the mollifier constants b_{k,l} as CSV.
    KernelConstants {
        #[arg(long, default_value_t = 1)]
        dim: usize,
    },
    /// Fit a rate to an existing error CSV.
    Rates {
        csv: PathBuf,
        /// Theoretical exponent; when given, the fit is judged against it.
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_SLOPE_TOLERANCE)]
        slope_tolerance: f64,
        #[arg(long, default_value_t = DEFAULT_NOISE_MULTIPLIER)]
        noise_multiplier: f64,
    },
}

fn exit_for(verdict: Verdict) -> ExitCode {
    match verdict {
        Verdict::Pass => ExitCode::SUCCESS,
        Verdict::Fail => ExitCode::from(EXIT_FAIL),
        Verdict::Inconclusive => ExitCode::from(EXIT_INCONCLUSIVE),
    }
}

fn report_error(e: &Error) -> ExitCode {
    match e {
        Error::Config(fields) => {
            eprintln!("invalid configuration:");
            for f in fields {
                eprintln!("  {f}");
            }
            ExitCode::from(EXIT_CONFIG)
        }
        Error::Inconclusive(_) => {
            eprintln!("{e}");
            ExitCode::from(EXIT_INCONCLUSIVE)
        }
        _ => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}

fn configure_workers() -> Result<(), String> {
    let Ok(raw) = std::env::var(WORKERS_VAR) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("{WORKERS_VAR} must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn load(config: &Path) -> chernoff::Result<(Experiment, String)> {
    let text = std::fs::read_to_string(config)?;
    Ok((Experiment::from_toml(&text)?, text))
}

fn default_out(config: &Path) -> PathBuf {
    let stem = config.file_stem().and_then(|s| s.to_str()).unwrap_or("experiment");
    config.with_file_name(format!("{stem}.out"))
}

fn rates(csv: &Path, gamma: Option<f64>, slope_tolerance: f64, noise: f64) -> chernoff::Result<ExitCode> {
    let curve = ErrorCurve::from_csv(&std::fs::read_to_string(csv)?)?;
    let fit = fit_rate(&curve, noise);
    let verdict = match (&fit, gamma) {
        (Err(_), _) => Some(Verdict::Inconclusive),
        (Ok(f), Some(g)) if f.slope >= g - slope_tolerance => Some(Verdict::Pass),
        (Ok(_), Some(_)) => Some(Verdict::Fail),
        (Ok(_), None) => None,
    };
    let out = serde_json::json!({
        "fit": fit.as_ref().ok(),
        "fit_plus": fit_rate_side(&curve, noise, Side::Upper).ok(),
        "fit_minus": fit_rate_side(&curve, noise, Side::Lower).ok(),
        "gamma": gamma,
        "slope_tolerance": slope_tolerance,
        "noise_multiplier": noise,
        "verdict": verdict,
        "notes": fit.as_ref().err().map(|e| e.to_string()),
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(verdict.map_or(ExitCode::SUCCESS, exit_for))
}

fn execute(command: Command) -> chernoff::Result<ExitCode> {
    match command {
        Command::Run { config, out } => {
            let text = std::fs::read_to_string(&config)?;
            let out = out.unwrap_or_else(|| default_out(&config));
            let report = run_to_dir(&text, &out)?;
            let slope = report.rate.fit.map_or("n/a".to_string(), |f| format!("{:.4}", f.slope));
            println!(
                "{}: verdict {:?}, fitted slope {slope}, gamma {}, artifacts in {}",
                if report.name.is_empty() { "experiment" } else { &report.name },
                report.verdict,
                report.rate.gamma,
                out.display()
            );
            for note in &report.rate.notes {
                println!("  note: {note}");
            }
            Ok(exit_for(report.verdict))
        }
        Command::CheckInvariants { config } => {
            let (exp, _) = load(&config)?;
            let report = exp.check_invariants()?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(if report.pass { ExitCode::SUCCESS } else { ExitCode::from(EXIT_FAIL) })
        }
        Command::Bounds { config } => {
            let (exp, _) = load(&config)?;
            println!("{}", serde_json::to_string_pretty(&exp.bound_reports()?)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::KernelConstants { dim } => {
            print!("{}", MollifierKernel::new(dim)?.table_csv());
            Ok(ExitCode::SUCCESS)
        }
        Command::Rates {
            csv,
            gamma,
            slope_tolerance,
            noise_multiplier,
        } => rates(&csv, gamma, slope_tolerance, noise_multiplier),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(msg) = configure_workers() {
        eprintln!("invalid configuration:\n  {msg}");
        return ExitCode::from(EXIT_CONFIG);
    }
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => report_error(&e),
    }
}
