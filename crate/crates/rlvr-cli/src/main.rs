//! `rlvr` — train, analyse, and verify RLVR task-composition experiments.
//!
//! Exit codes: 0 success, 1 check failure, 2 invalid config, 3 reward
//! starvation.

mod config;
mod output;
mod runners;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Result};
use clap::{Parser, Subcommand};
use serde_json::json;

use config::{InvalidConfig, Kind, Payload, Resolved};
use output::{json_line, write_atomic, JsonlDoc};

#[derive(Parser)]
#[command(
    name = "rlvr",
    version,
    about = "Simulator and theory checks for RLVR over autoregressive task compositions"
)]
struct Cli {
    /// Experiment config (JSON). Required for every command except verify.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config's out_dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed (overrides the config's seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for replicates/grid points (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Train on a problem and emit per-iteration metrics.
    Simulate,
    /// Iterations-to-target accuracy as a function of composition length.
    SweepLength,
    /// Final accuracy of trap training as a function of the initial
    /// correct-task probability.
    SweepP0,
    /// Run the full theory-check suite.
    Verify,
    /// Evaluate the closed-form hyperparameter plan.
    Plan,
    /// Iterate the trap problem's infinite-batch recursion.
    MeanField,
}

impl Command {
    fn kind(self) -> Kind {
        match self {
            Command::Simulate => Kind::Simulate,
            Command::SweepLength => Kind::SweepLength,
            Command::SweepP0 => Kind::SweepP0,
            Command::Verify => Kind::Verify,
            Command::Plan => Kind::Plan,
            Command::MeanField => Kind::MeanField,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if threads > 0 {
            // A failed build means a pool already exists (tests); fine.
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build_global();
        }
    }
    match run(&cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            classify_error(&err)
        }
    }
}

fn classify_error(err: &anyhow::Error) -> ExitCode {
    if err.downcast_ref::<InvalidConfig>().is_some() {
        return ExitCode::from(2);
    }
    if let Some(core) = err.downcast_ref::<rlvr_core::Error>() {
        return match core {
            rlvr_core::Error::RewardStarvation { .. } => ExitCode::from(3),
            rlvr_core::Error::InvalidParameter { .. } | rlvr_core::Error::ShapeMismatch { .. } => {
                ExitCode::from(2)
            }
            _ => ExitCode::from(1),
        };
    }
    ExitCode::from(1)
}

fn load_resolved(cli: &Cli, kind: Kind) -> Result<(Resolved, Option<String>)> {
    match &cli.config {
        Some(path) => {
            let raw = config::parse_file(path)?;
            if raw.kind != kind {
                return config::invalid(format!(
                    "config kind `{}` does not match the `{kind}` subcommand",
                    raw.kind
                ));
            }
            let configured_out = raw.out_dir.clone();
            Ok((config::resolve(raw, cli.seed)?, configured_out))
        }
        None if kind == Kind::Verify => Ok((
            Resolved {
                kind,
                seed: cli.seed.unwrap_or(config::DEFAULT_SEED),
                payload: Payload::Verify,
            },
            None,
        )),
        None => config::invalid(format!("the `{kind}` subcommand requires --config")),
    }
}

fn run(cli: &Cli) -> Result<ExitCode> {
    let kind = cli.command.kind();
    let (resolved, config_out) = load_resolved(cli, kind)?;
    let out_dir = || -> PathBuf {
        cli.out
            .clone()
            .or_else(|| config_out.as_deref().map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"))
    };
    match (&resolved.payload, cli.command) {
        (Payload::Simulate(p), Command::Simulate) => {
            runners::run_simulate(&resolved, p, &out_dir())?;
            Ok(ExitCode::SUCCESS)
        }
        (Payload::SweepLength(p), Command::SweepLength) => {
            runners::run_sweep_length(&resolved, p, &out_dir())?;
            Ok(ExitCode::SUCCESS)
        }
        (Payload::SweepP0(p), Command::SweepP0) => {
            runners::run_sweep_p0(&resolved, p, &out_dir())?;
            Ok(ExitCode::SUCCESS)
        }
        (Payload::Verify, Command::Verify) => {
            let out = verify::run_verify(resolved.seed);
            for check in &out.checks {
                println!(
                    "{} {:<32} {}",
                    if check.passed { "PASS" } else { "FAIL" },
                    check.name,
                    check.detail
                );
            }
            let write_to = cli
                .out
                .clone()
                .or_else(|| config_out.as_deref().map(PathBuf::from));
            if let Some(dir) = write_to {
                let config_value = resolved.to_value();
                let report = json!({
                    "schema_version": config::SCHEMA_VERSION,
                    "master_seed": resolved.seed,
                    "config": config_value,
                    "checks": out.checks.iter().map(|c| json!({
                        "name": c.name,
                        "passed": c.passed,
                        "detail": c.detail,
                    })).collect::<Vec<_>>(),
                });
                let mut text = json_line(&report);
                text.push('\n');
                write_atomic(&dir.join("verify_report.json"), &text)?;
                let mut tables =
                    JsonlDoc::new(config::SCHEMA_VERSION, resolved.seed, &resolved.to_value());
                for (case, table) in &out.tables {
                    tables.push(&verify::flat_table(case, table));
                }
                tables.write(&dir.join("outcome_tables.jsonl"))?;
                let mut text = json_line(&resolved.to_value());
                text.push('\n');
                write_atomic(&dir.join("config.json"), &text)?;
            }
            if out.all_passed() {
                println!("all {} checks passed", out.checks.len());
                Ok(ExitCode::SUCCESS)
            } else {
                let failures = out.checks.iter().filter(|c| !c.passed).count();
                Err(anyhow!(ChecksFailed(failures)))
            }
        }
        (Payload::Plan(p), Command::Plan) => {
            let dir = cli
                .out
                .clone()
                .or_else(|| config_out.as_deref().map(PathBuf::from));
            runners::run_plan(&resolved, p, dir.as_deref())?;
            Ok(ExitCode::SUCCESS)
        }
        (Payload::MeanField(p), Command::MeanField) => {
            runners::run_mean_field(&resolved, p, &out_dir())?;
            Ok(ExitCode::SUCCESS)
        }
        _ => config::invalid("config payload does not match the subcommand"),
    }
}

#[derive(Debug)]
struct ChecksFailed(usize);

impl std::fmt::Display for ChecksFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} verification check(s) failed", self.0)
    }
}

impl std::error::Error for ChecksFailed {}
