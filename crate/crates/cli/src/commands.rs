use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ucl_core::graphs::{class_sizes, edge_quality, generate_synthetic_records, SplitDataset, SyntheticConfig};
use ucl_core::harness::{evaluate, gradient_suite, train_with, GraphContext, TrainConfig, Variant};

use crate::bundle::{load_checkpoint, read_bundle, save_checkpoint, write_bundle, Checkpoint};
use crate::config::{load_synthetic_config, load_train_config};
use crate::export::{write_embeddings_csv, write_epoch_log, write_metrics_csv, write_metrics_json};

#[derive(Debug, Parser)]
#[command(name = "ucl", version, about = "Uncertainty-guided class-imbalance learning on multi-view message graphs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic long-tail dataset bundle.
    Generate(GenerateArgs),
    /// Train a model on a dataset bundle.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split.
    Eval(EvalArgs),
    /// Run the finite-difference gradient suite.
    CheckGrad(CheckGradArgs),
    /// Write per-view embeddings and fused uncertainties as CSV.
    ExportEmbeddings(ExportArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Built-in recipe: `default` (10 classes) or `crisislex7`.
    #[arg(long, conflicts_with = "config")]
    pub preset: Option<String>,
    /// Generator config file (TOML or JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output bundle directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset bundle directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Training config file (TOML or JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Applies a named variant on top of the config: ucl, ucl-ec, psc, psc+m, psc+dm, no-euc.
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for checkpoint.json and epochs.jsonl.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitName {
    Train,
    Val,
    Test,
    All,
}

impl SplitName {
    fn indices(self, dataset: &SplitDataset) -> Vec<usize> {
        match self {
            SplitName::Train => dataset.splits.train.clone(),
            SplitName::Val => dataset.splits.val.clone(),
            SplitName::Test => dataset.splits.test.clone(),
            SplitName::All => (0..dataset.node_count()).collect(),
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitName,
    /// Output directory for metrics.json and metrics.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CheckGradArgs {
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    pub split: SplitName,
    /// Output CSV file.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Generate(a) => generate(&a),
        Command::Train(a) => train(&a),
        Command::Eval(a) => eval(&a),
        Command::CheckGrad(a) => check_grad(&a),
        Command::ExportEmbeddings(a) => export(&a),
    }
}

fn load_data(path: &Path) -> Result<SplitDataset> {
    read_bundle(path).with_context(|| format!("--data {}", path.display()))
}

fn create_dir(path: &Path, flag: &str) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("{flag} {}: cannot create directory", path.display()))
}

fn generate(a: &GenerateArgs) -> Result<ExitCode> {
    let mut config = match (&a.preset, &a.config) {
        (Some(name), _) => SyntheticConfig::preset(name).with_context(|| format!("--preset {name}"))?,
        (None, Some(path)) => load_synthetic_config(path).with_context(|| format!("--config {}", path.display()))?,
        (None, None) => SyntheticConfig::default(),
    };
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    let (records, splits) = generate_synthetic_records(&config, config.seed)?;
    let dataset = SplitDataset::from_records(&records, config.classes, splits)?;
    write_bundle(&a.out, &records, &dataset).with_context(|| format!("--out {}", a.out.display()))?;
    let sizes = class_sizes(&config)?;
    println!("wrote {} messages to {}", records.len(), a.out.display());
    println!("training class sizes: {sizes:?}");
    for g in &dataset.graphs {
        match edge_quality(g, &dataset.labels)? {
            Some(q) => println!("{}: {} edges, correct-edge ratio {q:.4}", g.view, g.edge_count()),
            None => println!("{}: no edges", g.view),
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut config = match &a.config {
        Some(path) => load_train_config(path).with_context(|| format!("--config {}", path.display()))?,
        None => TrainConfig::default(),
    };
    if let Some(name) = &a.variant {
        config = Variant::parse(name).with_context(|| format!("--variant {name}"))?.apply(&config);
    }
    if let Some(e) = a.epochs {
        config.epochs = e;
    }
    if let Some(s) = a.seed {
        config.seed = s;
    }
    config.validate()?;
    Ok(config)
}

fn train(a: &TrainArgs) -> Result<ExitCode> {
    let config = train_config(a)?;
    let dataset = load_data(&a.data)?;
    create_dir(&a.out, "--out")?;
    let log_path = a.out.join("epochs.jsonl");
    let mut log = Vec::new();
    let outcome = train_with(&dataset, &config, ucl_core::harness::objective, |r| {
        log.push(r.clone());
        // keep the log on disk current so long runs can be followed
        if let Err(e) = write_epoch_log(&log_path, &log) {
            log::warn!("{e:#}");
        }
    })?;
    write_epoch_log(&log_path, &outcome.log)?;
    save_checkpoint(
        &a.out.join("checkpoint.json"),
        &Checkpoint {
            config,
            epoch: outcome.best_epoch,
            model: outcome.best,
        },
    )?;
    let best = &outcome.log[outcome.best_epoch - 1];
    println!(
        "best validation accuracy {:.4} at epoch {}; wrote {}",
        best.val_accuracy,
        outcome.best_epoch,
        a.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn load_pair(data: &Path, checkpoint: &Path) -> Result<(SplitDataset, Checkpoint)> {
    let dataset = load_data(data)?;
    let ckpt = load_checkpoint(checkpoint).with_context(|| format!("--checkpoint {}", checkpoint.display()))?;
    if ckpt.model.classes() != dataset.classes || ckpt.model.encoders[0].input_dim() != dataset.input_dim() {
        bail!(
            "--checkpoint {} expects {} classes and {} features, dataset has {} and {}",
            checkpoint.display(),
            ckpt.model.classes(),
            ckpt.model.encoders[0].input_dim(),
            dataset.classes,
            dataset.input_dim()
        );
    }
    Ok((dataset, ckpt))
}

fn eval(a: &EvalArgs) -> Result<ExitCode> {
    let (dataset, ckpt) = load_pair(&a.data, &a.checkpoint)?;
    let ctx = GraphContext::new(&dataset);
    let indices = a.split.indices(&dataset);
    let report = evaluate(&ckpt.model, &ctx, &indices, &ckpt.model.table)?;
    create_dir(&a.out, "--out")?;
    write_metrics_json(&a.out.join("metrics.json"), &report)?;
    write_metrics_csv(&a.out.join("metrics.csv"), &report)?;
    println!(
        "accuracy {:.4}, macro-F1 {:.4} over {} samples; wrote {}",
        report.accuracy,
        report.macro_f1,
        report.samples,
        a.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn check_grad(a: &CheckGradArgs) -> Result<ExitCode> {
    let entries = gradient_suite(a.seed)?;
    let mut failed = 0;
    for e in &entries {
        let status = if e.report.passed() { "ok" } else { "FAILED" };
        println!("{:<20} worst relative error {:.2e}  {status}", e.name, e.report.worst());
        if !e.report.passed() {
            failed += 1;
            for m in e.report.flagged.iter().take(5) {
                println!(
                    "    param {} entry {}: analytic {:.6e}, numeric {:.6e}",
                    m.param, m.entry, m.analytic, m.numeric
                );
            }
        }
    }
    if failed == 0 {
        println!("all {} gradient checks passed", entries.len());
        Ok(ExitCode::SUCCESS)
    } else {
        println!("{failed} of {} gradient checks failed", entries.len());
        Ok(ExitCode::FAILURE)
    }
}

fn export(a: &ExportArgs) -> Result<ExitCode> {
    let (dataset, ckpt) = load_pair(&a.data, &a.checkpoint)?;
    let ctx = GraphContext::new(&dataset);
    let predictions = ckpt.model.predict(&ctx)?;
    let nodes = a.split.indices(&dataset);
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent, "--out")?;
    }
    write_embeddings_csv(&a.out, &predictions, &dataset.ids, &dataset.labels, &nodes)
        .with_context(|| format!("--out {}", a.out.display()))?;
    println!("wrote {} rows to {}", nodes.len() * predictions.embeddings.len(), a.out.display());
    Ok(ExitCode::SUCCESS)
}
