//! `occode`: prepare data, train, calibrate, predict and audit an occupational coder.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::output::Outputs;

#[derive(Debug, Parser)]
#[command(name = "occode", version, about = "Automatic HISCO coding of occupational descriptions")]
pub struct Cli {
    /// Run configuration (JSON). Flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Output directory, overriding `paths.output_dir`.
    #[arg(long, global = true, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    /// Global seed, overriding `seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Clean raw rows, split them, and add synthetic combinations to the training part.
    Prepare(PrepareArgs),
    /// Train a model from scratch.
    Train(TrainArgs),
    /// Grid-search optimal thresholds per metric and language.
    Calibrate(CalibrateArgs),
    /// Code new descriptions.
    Predict(PredictArgs),
    /// Test-set metrics, per-code statistics, trend curves and status regressions.
    Evaluate(EvaluateArgs),
    /// Export pooled embeddings.
    Embed(EmbedArgs),
    /// Continue training a checkpoint on new data with the same label space.
    Finetune(FinetuneArgs),
    /// Draw a random sample of predictions for manual review.
    VerifyDraw(VerifyDrawArgs),
    /// Score an annotated review sample.
    VerifyScore(VerifyScoreArgs),
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// Raw CSV: occ_text,hisco_1..hisco_5,lang,source.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub label_space: Option<PathBuf>,
    #[arg(long)]
    pub transliteration: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Cleaned training CSV [default: <out>/train.csv].
    #[arg(long)]
    pub train_data: Option<PathBuf>,
    /// Cleaned validation CSV [default: <out>/val.csv].
    #[arg(long)]
    pub val_data: Option<PathBuf>,
    #[arg(long)]
    pub label_space: Option<PathBuf>,
    /// Where to save the model [default: <out>/model.occn].
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Model to run over `--data`.
    #[arg(long, conflicts_with = "predictions")]
    pub checkpoint: Option<PathBuf>,
    /// Cleaned CSV to calibrate on [default: <out>/val.csv].
    #[arg(long, conflicts_with = "predictions")]
    pub data: Option<PathBuf>,
    /// Precomputed prediction matrix (lang,targets,<code>...) instead of a model.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ThresholdArgs {
    /// Decision threshold [default: F1-optimal pooled threshold from the calibration file, else 0.5].
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Calibration JSON [default: <out>/thresholds.json when it exists].
    #[arg(long)]
    pub calibration: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// CSV with columns occ_text (or text) and lang, optionally id.
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub threshold: ThresholdArgs,
    /// Emit the most probable code when nothing clears the threshold.
    #[arg(long)]
    pub fallback_top1: bool,
    #[arg(long)]
    pub transliteration: Option<PathBuf>,
    /// [default: <out>/predictions.csv]
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Cleaned test CSV [default: <out>/test.csv].
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Cleaned training CSV used for per-code training counts [default: <out>/train.csv].
    #[arg(long)]
    pub train_data: Option<PathBuf>,
    /// HISCAM scores; the status regressions are skipped without them.
    #[arg(long)]
    pub hiscam: Option<PathBuf>,
    #[command(flatten)]
    pub threshold: ThresholdArgs,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Cleaned CSV [default: <out>/test.csv].
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Append a two-component PCA projection.
    #[arg(long)]
    pub pca: bool,
    /// [default: <out>/embeddings.csv]
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Cleaned CSV of new data.
    #[arg(long)]
    pub data: PathBuf,
    /// [default: <out>/finetuned.occn]
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
}

#[derive(Debug, Args)]
pub struct VerifyDrawArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Same format as for `predict`.
    #[arg(long)]
    pub input: PathBuf,
    /// Sample size.
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    #[command(flatten)]
    pub threshold: ThresholdArgs,
    #[arg(long)]
    pub fallback_top1: bool,
    #[arg(long)]
    pub transliteration: Option<PathBuf>,
    /// [default: <out>/review.csv]
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyScoreArgs {
    /// Annotated review CSV.
    #[arg(long)]
    pub review: PathBuf,
    /// [default: <out>/review_score.json]
    #[arg(long)]
    pub output: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut outputs = Outputs::default();
    match commands::run(cli, &mut outputs) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            outputs.discard();
            eprintln!("{e}");
            ExitCode::from(e.category.exit_code() as u8)
        }
    }
}
