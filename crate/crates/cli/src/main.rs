//! `dpml`: generate panels, meta-train, evaluate against baselines, run
//! the ablation sweep, and verify that recorded runs reproduce.

mod driver;
mod manifest;
mod plot;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use dpml_core::config::RunConfig;
use dpml_core::data::Split;
use dpml_core::{Error, Result};

const EXIT_CODES: &str = "Exit codes:
  0  success
  1  io or internal error
  2  configuration error
  3  data error
  4  numeric failure
  5  checkpoint or fingerprint mismatch
  6  verification failure";

#[derive(Parser)]
#[command(
    name = "dpml",
    version,
    about = "Dual-process meta-learning for intraday volume prediction",
    after_help = EXIT_CODES
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigOpts {
    /// Flat `key = value` config file.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override one config key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigOpts {
    /// Defaults, then file, then DPML_* env, then `--set`, then `extra`
    /// (command-specific flags), then `--seed`.
    fn resolve(&self, extra: &[(String, String)]) -> Result<RunConfig> {
        let mut overrides = Vec::new();
        for s in &self.set {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| Error::config(format!("--set needs KEY=VALUE, got {s:?}")))?;
            overrides.push((k.trim().to_string(), v.trim().to_string()));
        }
        overrides.extend_from_slice(extra);
        if let Some(seed) = self.seed {
            overrides.push(("seed".to_string(), seed.to_string()));
        }
        RunConfig::load(self.config.as_deref(), &overrides)
    }
}

fn ablate_overrides(flags: &Option<String>) -> Vec<(String, String)> {
    flags
        .iter()
        .flat_map(|s| s.split(','))
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|f| (f.to_string(), "true".to_string()))
        .collect()
}

fn eval_split(s: &str) -> Result<Split> {
    match s {
        "dev" => Ok(Split::Dev),
        "test" => Ok(Split::Test),
        other => Err(Error::config(format!("--split must be dev or test, got {other:?}"))),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic market panel CSV.
    GenData {
        #[command(flatten)]
        config: ConfigOpts,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Meta-train on a panel CSV; writes checkpoints, a JSONL log, and a
    /// loss curve.
    Train {
        #[command(flatten)]
        config: ConfigOpts,
        /// Input panel CSV.
        #[arg(long)]
        data: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Train this many consecutive seeds and aggregate them.
        #[arg(long, default_value_t = 1)]
        repeat: usize,
        /// Comma-separated ablation flags to enable.
        #[arg(long, value_name = "FLAG[,FLAG...]")]
        ablate: Option<String>,
        /// Continue from `out/model_last.ckpt` when present.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate a checkpoint and the baselines on one split.
    Eval {
        /// Model checkpoint to evaluate.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Input panel CSV (must match the checkpoint's fingerprint).
        #[arg(long)]
        data: PathBuf,
        /// Split to score: dev or test.
        #[arg(long, default_value = "test")]
        split: String,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Also write per-instance predictions.csv.
        #[arg(long)]
        dump_predictions: bool,
        /// Adaptation seed (defaults to the checkpoint config's seed).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the full model plus every ablation and compare them.
    Ablate {
        #[command(flatten)]
        config: ConfigOpts,
        /// Input panel CSV.
        #[arg(long)]
        data: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Split to score: dev or test.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Re-run a directory's manifest and check every artifact reproduces.
    Verify {
        /// Directory holding manifest.json.
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { config, out } => {
            let cfg = config.resolve(&[])?;
            driver::run_gen_data(&cfg, &out)
        }
        Command::Train { config, data, out, repeat, ablate, resume } => {
            let cfg = config.resolve(&ablate_overrides(&ablate))?;
            driver::run_train(&driver::TrainParams { cfg, data, out, repeat, resume })
        }
        Command::Eval { checkpoint, data, split, out, dump_predictions, seed } => {
            driver::run_eval(&driver::EvalParams {
                checkpoint,
                data,
                split: eval_split(&split)?,
                out,
                dump_predictions,
                seed,
            })
        }
        Command::Ablate { config, data, out, split } => {
            let cfg = config.resolve(&[])?;
            driver::run_ablate(&driver::AblateParams {
                cfg,
                data,
                out,
                split: eval_split(&split)?,
            })
        }
        Command::Verify { out } => driver::run_verify(&out),
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::Data(_) => 3,
        Error::Numeric(_) => 4,
        Error::Checkpoint(_) => 5,
        Error::Verify(_) => 6,
        _ => 1,
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}
