//! `tthf` command-line driver.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tthf::experiment::{self, compare_runs, exit_code, sweep, ExperimentConfig};
use tthf::trainer::MetricsTrace;

#[derive(Parser)]
#[command(name = "tthf", version, about = "Two-timescale hybrid federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed of a config; writes trace CSVs and summary.json.
    Run {
        config: PathBuf,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a config once per value of a dotted parameter path.
    Sweep {
        config: PathBuf,
        /// Dotted path into the config, e.g. `schedule.gamma.gamma`.
        #[arg(long)]
        param: String,
        /// Comma-separated JSON values.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
    },
    /// Compare two trace CSVs of equal length; prints a JSON report.
    Compare { a: PathBuf, b: PathBuf },
    /// Check the seed-mean loss gap against the sublinear-rate envelope;
    /// prints the certificate JSON.
    BoundsReport {
        config: PathBuf,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(path: &PathBuf, out: Option<PathBuf>) -> tthf::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(o) = out {
        cfg.output_dir = o;
    }
    Ok(cfg)
}

fn parse_value(raw: &str) -> serde_json::Value {
    serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()))
}

fn execute(cmd: Command) -> tthf::Result<()> {
    match cmd {
        Command::Run { config, out } => {
            let cfg = load(&config, out)?;
            let res = experiment::run_config(&cfg)?;
            println!("{}", res.summary_path.display());
        }
        Command::Sweep { config, param, values } => {
            let cfg = load(&config, None)?;
            let values: Vec<_> = values.iter().map(|v| parse_value(v)).collect();
            for (v, s) in sweep(&cfg, &param, &values)? {
                println!(
                    "{param}={v}\tfinal_gap={:.6e}\tobjective={:.4}\tt75={}",
                    s.mean_final_gap,
                    s.mean_objective,
                    s.time_to_75pct_peak.map_or("-".to_string(), |t| t.to_string())
                );
            }
        }
        Command::Compare { a, b } => {
            let rep = compare_runs(&MetricsTrace::read_csv(a)?, &MetricsTrace::read_csv(b)?)?;
            println!("{}", serde_json::to_string_pretty(&rep)?);
        }
        Command::BoundsReport { config, out } => {
            let rep = experiment::bounds_report(&load(&config, None)?)?;
            let text = rep.to_json()?;
            match out {
                Some(p) => std::fs::write(p, text + "\n")?,
                None => println!("{text}"),
            }
            if rep.violations > 0 {
                log::warn!("{} of {} points exceed the envelope", rep.violations, rep.points.len());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
