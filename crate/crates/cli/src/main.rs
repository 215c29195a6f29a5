//! `popdyn`: runs one experiment from a JSON config and writes
//! `results.json` and `results.csv`.

mod config;
mod tasks;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use popdyn_core::{list_models, Error};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use config::{apply_override, ExperimentConfig};

#[derive(Parser)]
#[command(name = "popdyn", version, about = "Stochastic population dynamics experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override a config entry, e.g. `--set sim.horizon=20000`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Output directory (overrides `output_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override `sim.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; affects speed only.
        #[arg(long)]
        threads: Option<usize>,
        /// Attach raw long-run statistics (no verdicts).
        #[arg(long)]
        explore: bool,
    },
    /// Print the model catalog.
    ListModels,
}

enum Failure {
    Config(String),
    Numeric(String),
    Io(anyhow::Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Config(e.to_string()),
            other => Failure::Numeric(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::ListModels => {
            for m in list_models() {
                println!("{}", m.name);
                println!("  state space: {}", m.state_space);
                println!("  parameters:  {}", m.parameters);
                println!("  env wiring:  {}", m.env_wiring);
            }
            ExitCode::SUCCESS
        }
        Command::Run {
            config,
            set,
            out,
            seed,
            threads,
            explore,
        } => match run(&config, &set, out, seed, threads, explore) {
            Ok(dir) => {
                eprintln!("wrote {}", dir.display());
                ExitCode::SUCCESS
            }
            Err(Failure::Config(m)) => {
                eprintln!("error: {m}");
                ExitCode::from(2)
            }
            Err(Failure::Numeric(m)) => {
                eprintln!("error: {m}");
                ExitCode::from(3)
            }
            Err(Failure::Io(e)) => {
                eprintln!("error: {e:#}");
                ExitCode::from(1)
            }
        },
    }
}

fn load(path: &Path, sets: &[String], seed: Option<u64>) -> Result<ExperimentConfig, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut doc: Value = serde_json::from_str(&text)
        .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    for s in sets {
        apply_override(&mut doc, s)?;
    }
    if let Some(seed) = seed {
        apply_override(&mut doc, &format!("sim.seed={seed}"))?;
    }
    serde_json::from_value(doc).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn run(
    path: &Path,
    sets: &[String],
    out: Option<PathBuf>,
    seed: Option<u64>,
    threads: Option<usize>,
    explore: bool,
) -> Result<PathBuf, Failure> {
    let cfg = load(path, sets, seed)?;
    if let Some(n) = threads {
        if n == 0 {
            return Err(Failure::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Io(e.into()))?;
    }
    let dir = out
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("results"));

    let outcome = tasks::run(&cfg, explore)?;

    let resolved = serde_json::to_value(&cfg).expect("config serializes");
    let canonical = serde_json::to_string(&resolved).expect("config serializes");
    let hash: String = Sha256::digest(canonical.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();
    let doc = json!({
        "provenance": {
            "artifact": env!("CARGO_PKG_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
            "config_sha256": hash,
            "seed": cfg.sim.seed,
        },
        "config": resolved,
        "task": cfg.task.name(),
        "report": outcome.report,
    });

    write_outputs(&dir, &doc, &outcome.rows).map_err(Failure::Io)?;
    Ok(dir)
}

fn write_outputs(dir: &Path, doc: &Value, rows: &[tasks::Row]) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let json_path = dir.join("results.json");
    let csv_path = dir.join("results.csv");
    let result = (|| -> anyhow::Result<()> {
        let mut text = serde_json::to_string_pretty(doc)?;
        text.push('\n');
        fs::write(&json_path, text).with_context(|| format!("writing {}", json_path.display()))?;
        let mut w = csv::Writer::from_path(&csv_path)
            .with_context(|| format!("writing {}", csv_path.display()))?;
        for r in rows {
            w.serialize(r)?;
        }
        if rows.is_empty() {
            w.write_record(["task", "quantity", "species", "face", "mean", "std_error", "n", "verdict"])?;
        }
        w.flush()?;
        Ok(())
    })();
    if result.is_err() {
        let _ = fs::remove_file(&json_path);
        let _ = fs::remove_file(&csv_path);
    }
    result
}
