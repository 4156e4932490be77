//! `pcc`: simulate CSI recordings, preprocess them, train positioning
//! networks and evaluate their predictions.

mod artifacts;
mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use pcc_core::mlp::TrainingMode;

use crate::error::CliError;

#[derive(Parser)]
#[command(name = "pcc", version, about = "Channel charting with triangulation-augmented training")]
struct Cli {
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Recompute even if the output directory holds a matching run.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Fingerprint,
    Cc,
    CcAug,
}

impl From<Mode> for TrainingMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Fingerprint => TrainingMode::Fingerprint,
            Mode::Cc => TrainingMode::Siamese,
            Mode::CcAug => TrainingMode::Augmented,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a recording and write it as a dataset directory.
    Simulate {
        /// Scenario configuration (JSON); defaults to the standard training scenario.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Remove clutter, cluster, and compute features and dissimilarities.
    Preprocess {
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Apply this clutter model instead of fitting one (e.g. from the training set).
        #[arg(long)]
        clutter_model: Option<PathBuf>,
        /// Skip the dissimilarity matrix (enough for fingerprinting and prediction).
        #[arg(long)]
        no_dissim: bool,
    },
    /// Triangulate every cluster from angle-of-arrival estimates.
    BaselineTri {
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Reuse the clutter model and cluster window of a preprocess run.
        #[arg(long)]
        preprocessed: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train a positioning network.
    Train {
        dataset: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long)]
        preprocessed: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory of `baseline-tri` on the same dataset (cc-aug only).
        #[arg(long)]
        triangulation: Option<PathBuf>,
    },
    /// Map preprocessed clusters to positions with a trained model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        preprocessed: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare predictions with ground truth.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Score predictions as they are, without the least-squares affine fit.
        #[arg(long)]
        no_align: bool,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Validation("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Validation(e.to_string()))?;
    }
    let force = cli.force;
    match cli.command {
        Command::Simulate { config, out } => commands::simulate(config.as_deref(), &out, force),
        Command::Preprocess { dataset, out, config, clutter_model, no_dissim } => {
            commands::preprocess_cmd(&dataset, &out, config.as_deref(), clutter_model.as_deref(), no_dissim, force)
        }
        Command::BaselineTri { dataset, out, preprocessed, config } => {
            commands::baseline_tri(&dataset, &out, preprocessed.as_deref(), config.as_deref(), force)
        }
        Command::Train { dataset, mode, preprocessed, out, config, triangulation } => commands::train(
            &dataset,
            mode.into(),
            &preprocessed,
            &out,
            config.as_deref(),
            triangulation.as_deref(),
            force,
        ),
        Command::Predict { model, preprocessed, out } => commands::predict(&model, &preprocessed, &out, force),
        Command::Evaluate { predictions, labels, out, config, no_align } => {
            commands::evaluate_cmd(&predictions, &labels, &out, config.as_deref(), no_align, force)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
