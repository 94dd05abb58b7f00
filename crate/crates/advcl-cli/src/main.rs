//! Command-line front end for the adversarial contrastive learning
//! experiment pipeline.
//!
//! Every pipeline command takes a single TOML config file, writes its
//! artifacts into a fresh output directory, and seals the directory with a
//! `manifest.json` recording the config snapshot, seed, code version, input
//! hashes, and output hashes. A manifest plus the files it references is
//! enough to re-execute or audit the run; artifact hashes are verified
//! whenever a command reads a file another run produced.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use advcl_cli::commands;
use advcl_cli::config::{self, ConfigFile, Overrides};
use advcl_cli::manifest::run_id;

#[derive(Parser)]
#[command(
    name = "advcl",
    about = "Adversarial contrastive learning experiments",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every pipeline command.
#[derive(Args)]
struct RunArgs {
    /// Path to the TOML experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's random seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for this run (must not already contain files).
    /// Defaults to a run-id directory under the data dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Evaluate at most this many test examples.
    #[arg(long)]
    limit: Option<usize>,
    /// Override the attack budget (maximum fraction of words replaced).
    #[arg(long)]
    budget: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Contrastively pretrain an encoder pair and save the training state.
    Pretrain(RunArgs),
    /// Finetune a classifier, optionally starting from a pretrained state.
    Finetune(RunArgs),
    /// Pre-generate an adversarially augmented training corpus.
    Pregen(RunArgs),
    /// Attack a model on the test set and dump the perturbed examples.
    Attack(RunArgs),
    /// Train and evaluate every configured setting; one report per setting.
    Eval(RunArgs),
    /// Measure attack transferability between two settings, both directions.
    Transfer(RunArgs),
    /// Measure embedding distances between clean/adversarial pairs.
    Distances(RunArgs),
    /// Export clean and adversarial sentence embeddings as CSV.
    ExportEmb(RunArgs),
    /// Time the attack at several batch sizes.
    Bench(RunArgs),
    /// Sweep the negative-queue size and report robustness per size.
    SweepQueue(RunArgs),
    /// Compare robustness reports from previous runs in one table.
    Compare {
        /// Report files (report.json / attack_report.json) to compare.
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        /// Also write the comparison table to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(args: &RunArgs) -> Result<ConfigFile> {
    ConfigFile::load(
        &args.config,
        Overrides {
            seed: args.seed,
            limit: args.limit,
            budget: args.budget,
        },
    )
}

/// Resolve the output directory: `--out` if given, otherwise a fresh
/// run-id directory under the data dir.
fn out_dir(args: &RunArgs, command: &str, cfg: &ConfigFile) -> Result<PathBuf> {
    if let Some(out) = &args.out {
        return Ok(out.clone());
    }
    let id = run_id(command, cfg.seed, cfg);
    Ok(config::data_dir().join("runs").join(id))
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Compare { reports, out } => commands::cmd_compare(reports, out.as_deref()),
        Command::Pretrain(args) => dispatch(args, "pretrain", commands::cmd_pretrain),
        Command::Finetune(args) => dispatch(args, "finetune", commands::cmd_finetune),
        Command::Pregen(args) => dispatch(args, "pregen", commands::cmd_pregen),
        Command::Attack(args) => dispatch(args, "attack", commands::cmd_attack),
        Command::Eval(args) => dispatch(args, "eval", commands::cmd_eval),
        Command::Transfer(args) => dispatch(args, "transfer", commands::cmd_transfer),
        Command::Distances(args) => dispatch(args, "distances", commands::cmd_distances),
        Command::ExportEmb(args) => dispatch(args, "export-emb", commands::cmd_export_emb),
        Command::Bench(args) => dispatch(args, "bench", commands::cmd_bench),
        Command::SweepQueue(args) => dispatch(args, "sweep-queue", commands::cmd_sweep_queue),
    }
}

fn dispatch(
    args: &RunArgs,
    name: &str,
    f: impl FnOnce(&ConfigFile, &std::path::Path, &std::path::Path) -> Result<()>,
) -> Result<()> {
    let cfg = load(args)?;
    let dir = out_dir(args, name, &cfg)?;
    f(&cfg, &args.config, &dir).with_context(|| format!("{name} run failed"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
