//! `pc` — experiment harness binary.
//!
//! Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 data-format
//! error, 5 numerical error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ndarray::Array2;

use pc_cli::config::{ExperimentConfig, Overrides, TaskKind};
use pc_cli::dataset::synth_blobs;
use pc_cli::experiment::{run_experiment, write_csv};
use pc_cli::idx::{write_idx_images, write_idx_labels};
use pc_cli::Result;

#[derive(Parser)]
#[command(
    name = "pc",
    about = "Predictive-coding experiment harness",
    version,
    after_help = "The data directory resolves as: --data flag, then the \
                  PC_DATA_DIR environment variable, then the config `data` key."
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

/// Flags shared by every subcommand; each overrides the config file.
#[derive(Args)]
struct Common {
    /// Flat key=value config file.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed for all randomness.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Dataset directory.
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
    /// Metric CSV output path (write-synth: output directory).
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Training epochs.
    #[arg(long, value_name = "N")]
    epochs: Option<usize>,
    /// Inference steps per batch (kf-track: trajectory length).
    #[arg(long, value_name = "N")]
    steps: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a PC classifier (with BP side-by-side rows).
    TrainClassify(Common),
    /// Train a PC folded autoencoder.
    TrainCompress(Common),
    /// Compare precision-rescaled PC updates against BP gradients.
    BpCompare(Common),
    /// Track a linear-Gaussian system with the KF and the PC filter.
    KfTrack(Common),
    /// Finite-difference check of the analytic free-energy gradients.
    Gradcheck(Common),
    /// Generate a synthetic blob dataset and write it as an IDX pair.
    WriteSynth(Common),
}

fn load_config(common: &Common, task: TaskKind) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    cfg.task = task;
    cfg.apply_overrides(&Overrides {
        seed: common.seed,
        data: common.data.clone(),
        out: common.out.clone(),
        epochs: common.epochs,
        steps: common.steps,
    });
    Ok(cfg)
}

fn run_and_report(common: &Common, task: TaskKind) -> Result<()> {
    let cfg = load_config(common, task)?;
    let records = run_experiment(&cfg)?;
    write_csv(&cfg.out, &records)?;
    for r in &records {
        println!("{} epoch {} {} = {}", r.run_id, r.epoch, r.metric, r.value);
    }
    println!("wrote {} rows to {}", records.len(), cfg.out.display());
    Ok(())
}

fn write_synth(common: &Common) -> Result<()> {
    let cfg = load_config(common, TaskKind::Classify)?;
    let dir = common.out.clone().unwrap_or_else(|| cfg.data_dir.clone());
    std::fs::create_dir_all(&dir)?;
    let ds = synth_blobs(cfg.classes, cfg.per_class, cfg.dim, cfg.spread, cfg.seed)?;
    let pixels: Array2<u8> = ds.inputs.mapv(|v| (v * 255.0).round() as u8);
    let labels: Vec<u8> = ds
        .labels
        .as_ref()
        .expect("blobs are labeled")
        .iter()
        .map(|&l| l as u8)
        .collect();
    let images_path = dir.join("synth-images-idx3-ubyte");
    let labels_path = dir.join("synth-labels-idx1-ubyte");
    write_idx_images(&images_path, &pixels, 1, cfg.dim)?;
    write_idx_labels(&labels_path, &labels)?;
    println!(
        "wrote {} samples to {} / {}",
        ds.len(),
        images_path.display(),
        labels_path.display()
    );
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.cmd {
        Cmd::TrainClassify(c) => run_and_report(c, TaskKind::Classify),
        Cmd::TrainCompress(c) => run_and_report(c, TaskKind::Compress),
        Cmd::BpCompare(c) => run_and_report(c, TaskKind::BpCompare),
        Cmd::KfTrack(c) => run_and_report(c, TaskKind::KfTrack),
        Cmd::Gradcheck(c) => run_and_report(c, TaskKind::GradCheck),
        Cmd::WriteSynth(c) => write_synth(c),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pc: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
