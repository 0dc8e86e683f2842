use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use forcedvi::order_lab::worker_threads;
use forcedvi_cli::config::{parse_config, ExperimentKind, SchemaError};
use forcedvi_cli::output::write_json;
use forcedvi_cli::run::{run_experiment, Outcome, RunError};
use forcedvi_cli::selftest::run_selftest;
use serde::Serialize;

const EXIT_PASS: u8 = 0;
const EXIT_ERROR: u8 = 1;
const EXIT_VERDICT_FAIL: u8 = 2;

#[derive(Parser)]
#[command(name = "forcedvi", version, about = "Variational integrators for forced mechanical systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for CSV and JSON artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Seed for random test states (selftest only).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Run a discrete trajectory and write trajectory.csv.
    Simulate,
    /// Fit the empirical order of the one-step map.
    Order,
    /// Check that exact discrete data reproduces the continuous flow.
    Exactness,
    /// Compare the TQ step with the Q×Q step of the corresponding data.
    Correspond,
    /// Seeded battery of quick checks.
    Selftest,
}

#[derive(Serialize)]
struct Meta<'a> {
    command: &'a str,
    config: Option<String>,
    seed: u64,
    threads: usize,
    timestamp_unix: u64,
    version: &'a str,
}

fn write_meta(out: &Path, command: &str, cli: &Cli) -> std::io::Result<()> {
    let timestamp_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let meta = Meta {
        command,
        config: cli.config.as_ref().map(|p| p.display().to_string()),
        seed: cli.seed,
        threads: worker_threads(),
        timestamp_unix,
        version: env!("CARGO_PKG_VERSION"),
    };
    write_json(&out.join("meta.json"), &meta)
}

fn run_configured(cli: &Cli, kind: ExperimentKind) -> Result<Outcome, RunError> {
    let path = cli.config.as_ref().ok_or_else(|| SchemaError::single("", "--config is required for this command"))?;
    let text = fs::read_to_string(path)?;
    let cfg = parse_config(&text)?;
    if cfg.experiment.kind != kind {
        return Err(SchemaError::single(
            "experiment.kind",
            format!("config describes a {} experiment but the {} command was given", cfg.experiment.kind.as_str(), kind.as_str()),
        )
        .into());
    }
    let outcome = run_experiment(&cfg, &cli.out)?;
    write_meta(&cli.out, kind.as_str(), cli)?;
    Ok(outcome)
}

fn selftest(cli: &Cli) -> Result<Outcome, RunError> {
    fs::create_dir_all(&cli.out)?;
    let report = run_selftest(cli.seed);
    let path = cli.out.join("report.json");
    write_json(&path, &report)?;
    write_meta(&cli.out, "selftest", cli)?;
    for c in &report.checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let failed = report.checks.iter().filter(|c| !c.passed).count();
    Ok(Outcome { passed: report.passed, summary: format!("{failed} failed check(s)"), files: vec![path] })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_PASS };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Simulate => run_configured(&cli, ExperimentKind::Simulate),
        Command::Order => run_configured(&cli, ExperimentKind::Order),
        Command::Exactness => run_configured(&cli, ExperimentKind::Exactness),
        Command::Correspond => run_configured(&cli, ExperimentKind::Correspond),
        Command::Selftest => selftest(&cli),
    };
    match result {
        Ok(outcome) => {
            println!("{}: {}", if outcome.passed { "pass" } else { "fail" }, outcome.summary);
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            ExitCode::from(if outcome.passed { EXIT_PASS } else { EXIT_VERDICT_FAIL })
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
