//! `canopy`: batch front end for multi-label evaluation, threshold tuning,
//! ensembling and the from-scratch learners in `canopy-core`.
//!
//! Every run writes a JSON manifest next to its primary output (or to
//! `--manifest`). Exit status is 0 on success, 2 on usage errors and 1 on
//! data or validation errors.

mod commands;
mod config;
mod inputs;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::config::Merge;

/// Environment variable read for the default seed.
pub const SEED_ENV: &str = "CANOPY_SEED";
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Parser)]
#[command(name = "canopy", version, about = "Multi-label evaluation, thresholding and ensembling", propagate_version = true)]
struct Cli {
    /// TOML config file; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// RNG seed [default: $CANOPY_SEED, then 42].
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Manifest path [default: next to the primary output].
    #[arg(long, global = true, value_name = "FILE")]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Per-class and overall precision, recall, accuracy, F1 and F2.
    Metrics(MetricsArgs),
    /// Choose per-label cutoffs that maximize F-beta on a validation set.
    TuneThresholds(TuneArgs),
    /// Weighted majority vote over thresholded model predictions.
    Vote(VoteArgs),
    /// Stratified k-fold assignment for a tag file.
    Split(SplitArgs),
    /// Cross-validated evaluation of a classical learner.
    Cv(CvArgs),
    /// Fit a learner on features and tags and save it.
    Train(TrainArgs),
    /// Apply a saved model.
    Predict(PredictArgs),
    /// Train the stacking meta-learner on out-of-fold model predictions.
    Stack(StackArgs),
    /// ImageNet-style preprocessing and augmentation of NPY pixel arrays.
    Preprocess(PreprocessArgs),
}

#[derive(Debug, Default, Clone, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct MetricsArgs {
    /// Probability CSV: `image_name` then one column per label.
    #[arg(long, value_name = "FILE")]
    pub pred: Option<PathBuf>,
    /// Ground truth as `image_name,tags`.
    #[arg(long, value_name = "FILE")]
    pub truth: Option<PathBuf>,
    /// Per-label cutoffs as `label,threshold`.
    #[arg(long, value_name = "FILE")]
    pub thresholds: Option<PathBuf>,
    /// Uniform cutoff when no thresholds file is given [default: 0.5].
    #[arg(long)]
    pub cutoff: Option<f64>,
    /// Beta of the averaged summary lines [default: 2].
    #[arg(long)]
    pub beta: Option<f64>,
    /// Also write the table as CSV.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Clone, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct TuneArgs {
    #[arg(long, value_name = "FILE")]
    pub pred: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub truth: Option<PathBuf>,
    /// [default: 2]
    #[arg(long)]
    pub beta: Option<f64>,
    /// `coordinate` maximizes sample-averaged F-beta jointly; `per-class`
    /// maximizes each label's own F-beta [default: coordinate].
    #[arg(long)]
    pub mode: Option<String>,
    /// Output `label,threshold` CSV.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Clone, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct VoteArgs {
    /// Predictions of one model; repeat per model. Either a probability CSV
    /// or a hard-prediction `image_name,tags` file.
    #[arg(long = "pred", value_name = "FILE")]
    pub pred: Vec<PathBuf>,
    /// Cutoffs for the probability inputs, in order; 0.5 when omitted.
    #[arg(long = "thresholds", value_name = "FILE")]
    pub thresholds: Vec<PathBuf>,
    /// Positive integer weight per model, comma separated [default: all 1].
    #[arg(long, value_delimiter = ',')]
    pub weights: Vec<u32>,
    /// Output tag file.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Clone, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct SplitArgs {
    #[arg(long, value_name = "FILE")]
    pub truth: Option<PathBuf>,
    /// Number of folds [default: 5].
    #[arg(long)]
    pub k: Option<usize>,
    /// Output `image_name,fold` CSV.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

/// Hyperparameter overrides shared by `cv` and `train`.
#[derive(Debug, Default, Clone, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct LearnerArgs {
    /// lda, rf, extra, gbm or prior (`train` also accepts mlp) [default: lda].
    #[arg(long)]
    pub learner: Option<String>,
    /// Forest size.
    #[arg(long)]
    pub trees: Option<usize>,
    /// Boosting stages.
    #[arg(long)]
    pub stages: Option<usize>,
    #[arg(long)]
    pub max_depth: Option<usize>,
    /// Boosting shrinkage.
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// LDA ridge term.
    #[arg(long)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Default, Clone, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct CvArgs {
    /// Feature CSV: `image_name` then one numeric column per feature.
    #[arg(long, value_name = "FILE")]
    pub features: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub truth: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub learner: LearnerArgs,
    /// [default: 5]
    #[arg(long)]
    pub k: Option<usize>,
    /// Existing fold assignment instead of a fresh split.
    #[arg(long, value_name = "FILE")]
    pub folds: Option<PathBuf>,
    /// Per-fold and average rows as CSV.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

/// Network options for `train --learner mlp` and `stack`.
#[derive(Debug, Default, Clone, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct NetArgs {
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Vec<usize>,
    /// [default: 100]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// [default: 128]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Adam step size [default: 0.001].
    #[arg(long)]
    pub alpha: Option<f64>,
    /// adam or amsgrad [default: adam].
    #[arg(long)]
    pub optimizer: Option<String>,
    /// Early-stopping patience on validation loss; 0 disables [default: 5].
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Batch normalization after each hidden layer (always on for `stack`).
    #[arg(long)]
    #[serde(default)]
    pub batch_norm: bool,
    /// Share of samples held out for validation [default: 0.2].
    #[arg(long)]
    pub val_fraction: Option<f64>,
}

#[derive(Debug, Default, Clone, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct TrainArgs {
    #[arg(long, value_name = "FILE")]
    pub features: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub truth: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub learner: LearnerArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub net: NetArgs,
    /// Loss of the mlp learner: bce or hybrid (softmax over the weather
    /// labels) [default: bce].
    #[arg(long)]
    pub loss: Option<String>,
    /// Output model JSON.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Clone, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct PredictArgs {
    /// Model written by `train` or `stack`.
    #[arg(long, value_name = "FILE")]
    pub model: Option<PathBuf>,
    /// Feature CSV, for `train` models.
    #[arg(long, value_name = "FILE")]
    pub features: Option<PathBuf>,
    /// Base-model probability CSVs, for `stack` models, in training order.
    #[arg(long = "pred", value_name = "FILE")]
    pub pred: Vec<PathBuf>,
    /// Output probability CSV.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Also write hard predictions as a tag file, using the model's tuned
    /// cutoffs when it has them and 0.5 otherwise.
    #[arg(long, value_name = "FILE")]
    pub tags_out: Option<PathBuf>,
}

#[derive(Debug, Default, Clone, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct StackArgs {
    /// Out-of-fold probability CSV of one base model; repeat per model.
    #[arg(long = "pred", value_name = "FILE")]
    pub pred: Vec<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub truth: Option<PathBuf>,
    /// Fold assignment of the base models; its last fold is the
    /// validation part. Without it a stratified split of `--val-fraction`
    /// is drawn.
    #[arg(long, value_name = "FILE")]
    pub folds: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub net: NetArgs,
    /// Beta for the cutoffs tuned on the validation part [default: 2].
    #[arg(long)]
    pub beta: Option<f64>,
    /// Output model JSON.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Clone, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct PreprocessArgs {
    /// `h x w x 3` or `n x h x w x 3` NPY array of raw RGB pixels.
    #[arg(long = "in", value_name = "FILE")]
    #[serde(rename = "in")]
    pub input: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// tf, caffe or torch.
    #[arg(long)]
    pub mode: Option<String>,
    /// Pick the mode of a pretrained backbone, e.g. ResNet50 or Xception.
    #[arg(long)]
    pub backbone: Option<String>,
    /// Random flips and rotations, each with probability 0.5, before
    /// preprocessing.
    #[arg(long)]
    #[serde(default)]
    pub augment: bool,
}

/// Marks errors that are the caller's fault (exit status 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let file = config::load(cli.config.as_deref())?;
    let seed_cfg = |section: Option<u64>| config::resolve_seed(cli.seed, section, file.seed);
    let mut run = manifest::Run::new(cli.manifest.clone(), cli.config.clone());

    macro_rules! dispatch {
        ($args:expr, $section:ident, $name:literal, $f:path) => {{
            let mut args = $args;
            let section = file.$section.clone().unwrap_or_default();
            let seed = seed_cfg(section.seed);
            args.merge(section.args);
            run.begin($name, &args, &seed);
            let result = seed.and_then(|s| $f(&args, s, &mut run));
            run.finish(&result)?;
            result
        }};
    }

    match cli.command {
        Command::Metrics(a) => dispatch!(a, metrics, "metrics", commands::metrics),
        Command::TuneThresholds(a) => dispatch!(a, tune_thresholds, "tune-thresholds", commands::tune_thresholds),
        Command::Vote(a) => dispatch!(a, vote, "vote", commands::vote),
        Command::Split(a) => dispatch!(a, split, "split", commands::split),
        Command::Cv(a) => dispatch!(a, cv, "cv", commands::cv),
        Command::Train(a) => dispatch!(a, train, "train", commands::train),
        Command::Predict(a) => dispatch!(a, predict, "predict", commands::predict),
        Command::Stack(a) => dispatch!(a, stack, "stack", commands::stack),
        Command::Preprocess(a) => dispatch!(a, preprocess, "preprocess", commands::preprocess),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.chain().any(|c| c.is::<UsageError>()) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
