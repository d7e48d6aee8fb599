//! One function per subcommand.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use canopy_core::classical::{load_model, multioutput_fit, multioutput_predict, save_model, LearnerSpec};
use canopy_core::cv::{cv_evaluate, cv_evaluate_with};
use canopy_core::ensemble::{stack_train, weighted_vote, MetaConfig, MetaModel, ModelWeights, StackedFeatures};
use canopy_core::imageprep::{mode_for_model, preprocess as prep, random_augment, read_images_npy, write_images_npy, PreprocessMode, MODEL_MODES};
use canopy_core::io::{self, VocabSource};
use canopy_core::metrics::{averaged, report, sample_fbeta, Averaging};
use canopy_core::nn::{
    self, Activation, EarlyStopping, HiddenSpec, LossKind, Monitor, NetSpec, OptimizerConfig, OptimizerKind,
    TrainConfig, TrainedModel,
};
use canopy_core::split::stratified_kfold;
use canopy_core::threshold::{apply_thresholds, optimize_thresholds, OptimizeMode, ThresholdVector, DEFAULT_CUTOFF};
use canopy_core::{FeatureMatrix, LabelMatrix, LabelVocabulary, ProbMatrix, RngSeed};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::inputs;
use crate::manifest::Run;
use crate::{
    usage, CvArgs, LearnerArgs, MetricsArgs, NetArgs, PredictArgs, PreprocessArgs, SplitArgs, StackArgs, TrainArgs,
    TuneArgs, VoteArgs,
};

pub const MLP_FORMAT: &str = "canopy-mlp";
pub const STACK_FORMAT: &str = "canopy-stack";
pub const MODEL_VERSION: u32 = 1;

/// Dense network on standardized features.
#[derive(Debug, Serialize, Deserialize)]
struct MlpModel {
    format: String,
    version: u32,
    vocab: Arc<LabelVocabulary>,
    feature_mean: Vec<f64>,
    feature_scale: Vec<f64>,
    /// Cutoffs tuned for F2 on the validation part, if there was one.
    thresholds: Option<Vec<f64>>,
    model: TrainedModel,
}

#[derive(Debug, Serialize, Deserialize)]
struct StackModel {
    format: String,
    version: u32,
    beta: f64,
    thresholds: Vec<f64>,
    meta: MetaModel,
}

fn req<'a, T>(value: &'a Option<T>, flag: &str) -> anyhow::Result<&'a T> {
    value.as_ref().ok_or_else(|| usage(format!("missing --{flag} (or `{flag}` in the config table)")))
}

fn beta_arg(beta: Option<f64>) -> anyhow::Result<f64> {
    let b = beta.unwrap_or(2.0);
    if !(b > 0.0 && b.is_finite()) {
        return Err(usage(format!("--beta must be positive, got {b}")));
    }
    Ok(b)
}

fn unit_arg(v: f64, flag: &str) -> anyhow::Result<f64> {
    if !(0.0..=1.0).contains(&v) {
        return Err(usage(format!("--{flag} must lie in [0, 1], got {v}")));
    }
    Ok(v)
}

/// Writes to `out`, or to stdout when there is no `out`.
fn emit(
    out: Option<&PathBuf>,
    run: &mut Run,
    write: impl FnOnce(&mut dyn Write) -> canopy_core::Result<()>,
) -> anyhow::Result<()> {
    match out {
        Some(path) => {
            let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
            let mut w = BufWriter::new(file);
            write(&mut w)?;
            w.flush().with_context(|| format!("writing {}", path.display()))?;
            run.output(path);
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            write(&mut lock)?;
            lock.flush()?;
        }
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T, run: &mut Run) -> anyhow::Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, value)?;
    w.flush().with_context(|| format!("writing {}", path.display()))?;
    run.output(path);
    Ok(())
}

/// Probabilities and truth on the prediction file's rows.
fn probs_and_truth(
    pred_path: &Path,
    truth_path: &Path,
    run: &mut Run,
) -> anyhow::Result<(Vec<String>, ProbMatrix, LabelMatrix)> {
    let vocab = inputs::vocab_from_probs(pred_path)?;
    let (ids, probs) = inputs::probs(pred_path, &vocab, run)?;
    let (tids, truth) = inputs::truth(truth_path, Some(&vocab), run)?;
    let rows = inputs::align(&ids, pred_path, &tids, truth_path)?;
    Ok((ids, probs, truth.select_rows(&rows)))
}

pub fn metrics(a: &MetricsArgs, _seed: u64, run: &mut Run) -> anyhow::Result<()> {
    let pred_path = req(&a.pred, "pred")?;
    let truth_path = req(&a.truth, "truth")?;
    let beta = beta_arg(a.beta)?;
    let (_, probs, truth) = probs_and_truth(pred_path, truth_path, run)?;
    let cut = match (&a.thresholds, a.cutoff) {
        (Some(_), Some(_)) => return Err(usage("--thresholds and --cutoff are mutually exclusive")),
        (Some(path), None) => {
            run.input(path);
            io::load_thresholds(path, probs.vocab())?
        }
        (None, c) => ThresholdVector::uniform(unit_arg(c.unwrap_or(DEFAULT_CUTOFF), "cutoff")?, probs.vocab().clone())?,
    };
    let pred = apply_thresholds(&probs, &cut)?;
    let rep = report(&pred, &truth)?;
    print!("{rep}");
    println!();
    for (name, scheme) in [("macro", Averaging::Macro), ("micro", Averaging::Micro), ("sample", Averaging::Sample)] {
        let avg = averaged(&pred, &truth, &scheme, beta)?;
        println!(
            "{name:<6}  precision {:.6}  recall {:.6}  F{beta} {:.6}",
            avg.precision, avg.recall, avg.fbeta
        );
    }
    if let Some(out) = &a.out {
        std::fs::write(out, rep.to_csv()).with_context(|| format!("writing {}", out.display()))?;
        run.output(out);
    }
    Ok(())
}

pub fn tune_thresholds(a: &TuneArgs, _seed: u64, run: &mut Run) -> anyhow::Result<()> {
    let pred_path = req(&a.pred, "pred")?;
    let truth_path = req(&a.truth, "truth")?;
    let beta = beta_arg(a.beta)?;
    let mode = match a.mode.as_deref().unwrap_or("coordinate") {
        "coordinate" => OptimizeMode::Coordinate,
        "per-class" => OptimizeMode::PerClass,
        other => return Err(usage(format!("unknown --mode `{other}` (expected coordinate or per-class)"))),
    };
    let (_, probs, truth) = probs_and_truth(pred_path, truth_path, run)?;
    let base = apply_thresholds(&probs, &ThresholdVector::uniform(DEFAULT_CUTOFF, probs.vocab().clone())?)?;
    let before = sample_fbeta(&base, &truth, beta)?;
    let opt = optimize_thresholds(&probs, &truth, beta, mode)?;
    emit(a.out.as_ref(), run, |w| io::write_thresholds(w, &opt.thresholds))?;
    let summary = format!(
        "sample F{beta} at {DEFAULT_CUTOFF}: {before:.6}\nsample F{beta} tuned: {:.6}\n",
        opt.sample_fbeta
    );
    if a.out.is_some() {
        print!("{summary}");
        for ((name, c), f) in probs.vocab().names().iter().zip(opt.thresholds.cutoffs()).zip(&opt.per_class) {
            println!("{name:<20} {c:.6}  F{beta} {f:.6}");
        }
    } else {
        eprint!("{summary}");
    }
    Ok(())
}

/// Vocabulary of hard-prediction files, from the union of their tags.
fn vocab_from_tag_files(paths: &[&PathBuf]) -> anyhow::Result<Arc<LabelVocabulary>> {
    let mut names = BTreeSet::new();
    for p in paths {
        let (_, labels) = io::load_tags(p, &VocabSource::Infer)?;
        names.extend(labels.vocab().names().iter().cloned());
    }
    inputs::vocab_for_tags(&names)
}

pub fn vote(a: &VoteArgs, _seed: u64, run: &mut Run) -> anyhow::Result<()> {
    if a.pred.is_empty() {
        return Err(usage("vote needs at least one --pred"));
    }
    let is_tags: Vec<bool> = a.pred.iter().map(|p| inputs::is_tag_file(p)).collect::<anyhow::Result<_>>()?;
    let n_prob = is_tags.iter().filter(|&&t| !t).count();
    if !a.thresholds.is_empty() && a.thresholds.len() != n_prob {
        return Err(usage(format!(
            "{} --thresholds files for {n_prob} probability inputs",
            a.thresholds.len()
        )));
    }
    let weights = if a.weights.is_empty() {
        ModelWeights::uniform(a.pred.len())?
    } else if a.weights.len() != a.pred.len() {
        return Err(usage(format!("{} --weights for {} --pred files", a.weights.len(), a.pred.len())));
    } else {
        ModelWeights::new(a.weights.clone()).map_err(|e| usage(format!("--weights: {e}")))?
    };

    let vocab = match a.pred.iter().zip(&is_tags).find(|(_, &t)| !t) {
        Some((p, _)) => inputs::vocab_from_probs(p)?,
        None => vocab_from_tag_files(&a.pred.iter().collect::<Vec<_>>())?,
    };
    let mut preds = Vec::with_capacity(a.pred.len());
    let mut first_ids: Option<Vec<String>> = None;
    let mut prob_index = 0;
    for (path, &tags) in a.pred.iter().zip(&is_tags) {
        let (ids, labels) = if tags {
            inputs::truth(path, Some(&vocab), run)?
        } else {
            let (ids, probs) = inputs::probs(path, &vocab, run)?;
            let cut = match a.thresholds.get(prob_index) {
                Some(tp) => {
                    run.input(tp);
                    io::load_thresholds(tp, &vocab)?
                }
                None => ThresholdVector::uniform(DEFAULT_CUTOFF, vocab.clone())?,
            };
            prob_index += 1;
            (ids, apply_thresholds(&probs, &cut)?)
        };
        let labels = match &first_ids {
            None => {
                first_ids = Some(ids);
                labels
            }
            Some(first) => {
                if ids.len() != first.len() {
                    bail!("{}: {} rows, but {} has {}", path.display(), ids.len(), a.pred[0].display(), first.len());
                }
                labels.select_rows(&inputs::align(first, &a.pred[0], &ids, path)?)
            }
        };
        preds.push(labels);
    }
    let ids = first_ids.unwrap_or_default();
    let voted = weighted_vote(&preds, &weights)?;
    emit(a.out.as_ref(), run, |w| io::write_tags(w, &ids, &voted))?;
    eprintln!("voted {} samples over {} models, total weight {}", ids.len(), preds.len(), weights.total());
    Ok(())
}

pub fn split(a: &SplitArgs, seed: u64, run: &mut Run) -> anyhow::Result<()> {
    let truth_path = req(&a.truth, "truth")?;
    let k = a.k.unwrap_or(5);
    if k < 2 {
        return Err(usage(format!("--k must be at least 2, got {k}")));
    }
    let (ids, truth) = inputs::truth(truth_path, None, run)?;
    let folds = stratified_kfold(&truth, k, RngSeed(seed))?;
    emit(a.out.as_ref(), run, |w| io::write_folds(w, &ids, &folds))?;
    let sizes: Vec<String> = folds.sizes().iter().map(usize::to_string).collect();
    eprintln!("fold sizes: {}", sizes.join(" "));
    Ok(())
}

fn learner_spec(a: &LearnerArgs) -> anyhow::Result<LearnerSpec> {
    let name = a.learner.as_deref().unwrap_or("lda");
    let mut spec = LearnerSpec::from_name(name).map_err(|e| usage(e.to_string()))?;
    let not_for = |flag: &str| usage(format!("--{flag} does not apply to learner {name}"));
    if let Some(t) = a.trees {
        match &mut spec {
            LearnerSpec::RandomForest(p) | LearnerSpec::ExtraTrees(p) => p.n_estimators = t,
            _ => return Err(not_for("trees")),
        }
    }
    if let Some(d) = a.max_depth {
        match &mut spec {
            LearnerSpec::RandomForest(p) | LearnerSpec::ExtraTrees(p) => p.max_depth = Some(d),
            LearnerSpec::Gbm(p) => p.max_depth = Some(d),
            _ => return Err(not_for("max-depth")),
        }
    }
    if let Some(s) = a.stages {
        match &mut spec {
            LearnerSpec::Gbm(p) => p.n_stages = s,
            _ => return Err(not_for("stages")),
        }
    }
    if let Some(r) = a.learning_rate {
        match &mut spec {
            LearnerSpec::Gbm(p) if r > 0.0 && r.is_finite() => p.learning_rate = r,
            LearnerSpec::Gbm(_) => return Err(usage(format!("--learning-rate must be positive, got {r}"))),
            _ => return Err(not_for("learning-rate")),
        }
    }
    if let Some(l) = a.lambda {
        match &mut spec {
            LearnerSpec::Lda { lambda } => *lambda = l,
            _ => return Err(not_for("lambda")),
        }
    }
    spec.validate().map_err(|e| usage(e.to_string()))?;
    Ok(spec)
}

fn features_and_truth(
    features_path: &Path,
    truth_path: &Path,
    run: &mut Run,
) -> anyhow::Result<(Vec<String>, FeatureMatrix, LabelMatrix)> {
    let (ids, feats) = inputs::features(features_path, run)?;
    let (tids, truth) = inputs::truth(truth_path, None, run)?;
    let rows = inputs::align(&ids, features_path, &tids, truth_path)?;
    Ok((ids, feats, truth.select_rows(&rows)))
}

pub fn cv(a: &CvArgs, seed: u64, run: &mut Run) -> anyhow::Result<()> {
    let features_path = req(&a.features, "features")?;
    let truth_path = req(&a.truth, "truth")?;
    let spec = learner_spec(&a.learner)?;
    let (ids, feats, truth) = features_and_truth(features_path, truth_path, run)?;
    let result = match (&a.folds, a.k) {
        (Some(_), Some(_)) => return Err(usage("--folds and --k are mutually exclusive")),
        (Some(path), None) => {
            run.input(path);
            let folds = io::load_folds(path, &ids)?;
            cv_evaluate_with(&spec, &feats, &truth, &folds, RngSeed(seed))?
        }
        (None, k) => {
            let k = k.unwrap_or(5);
            if k < 2 {
                return Err(usage(format!("--k must be at least 2, got {k}")));
            }
            cv_evaluate(&spec, &feats, &truth, k, RngSeed(seed))?
        }
    };
    let mut table = String::from("fold,precision,recall,accuracy,f1,f2,loss\n");
    for f in &result.folds {
        let t = &f.report.total;
        table.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            f.fold, t.precision, t.recall, t.accuracy, t.f1, t.f2, f.loss
        ));
    }
    let m = &result.average;
    table.push_str(&format!(
        "average,{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
        m.precision, m.recall, m.accuracy, m.f1, m.f2, result.average_loss
    ));
    print!("{table}");
    if let Some(out) = &a.out {
        std::fs::write(out, &table).with_context(|| format!("writing {}", out.display()))?;
        run.output(out);
    }
    Ok(())
}

fn net_unset(n: &NetArgs) -> bool {
    n.hidden.is_empty()
        && n.epochs.is_none()
        && n.batch_size.is_none()
        && n.alpha.is_none()
        && n.optimizer.is_none()
        && n.patience.is_none()
        && n.dropout.is_none()
        && !n.batch_norm
        && n.val_fraction.is_none()
}

/// Training settings from the network flags. Early stopping and
/// checkpointing are dropped when there is no validation part.
fn train_config(n: &NetArgs, loss: LossKind, has_val: bool, seed: u64) -> anyhow::Result<TrainConfig> {
    let epochs = n.epochs.unwrap_or(100);
    let batch_size = n.batch_size.unwrap_or(128);
    let alpha = n.alpha.unwrap_or(0.001);
    if epochs == 0 || batch_size == 0 {
        return Err(usage("--epochs and --batch-size must be at least 1"));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(usage(format!("--alpha must be positive, got {alpha}")));
    }
    let kind = match n.optimizer.as_deref().unwrap_or("adam") {
        "adam" => OptimizerKind::Adam,
        "amsgrad" => OptimizerKind::Amsgrad,
        other => return Err(usage(format!("unknown --optimizer `{other}` (expected adam or amsgrad)"))),
    };
    let patience = n.patience.unwrap_or(5);
    Ok(TrainConfig {
        loss,
        batch_size,
        max_epochs: epochs,
        optimizer: OptimizerConfig { kind, alpha, ..OptimizerConfig::default() },
        early_stopping: (has_val && patience > 0).then_some(EarlyStopping { patience, monitor: Monitor::ValLoss }),
        checkpoint: has_val,
        seed: RngSeed(seed),
        lr_schedule: Vec::new(),
    })
}

fn dropout_arg(n: &NetArgs, default: f64) -> anyhow::Result<f64> {
    let d = n.dropout.unwrap_or(default);
    if !(0.0..1.0).contains(&d) {
        return Err(usage(format!("--dropout must lie in [0, 1), got {d}")));
    }
    Ok(d)
}

/// `(train rows, validation rows)`: one fold of a stratified split with
/// about `val_fraction` of the samples, or no validation for 0.
fn holdout(truth: &LabelMatrix, val_fraction: Option<f64>, seed: u64) -> anyhow::Result<(Vec<usize>, Vec<usize>)> {
    let f = val_fraction.unwrap_or(0.2);
    if !(0.0..0.5).contains(&f) {
        return Err(usage(format!("--val-fraction must lie in [0, 0.5), got {f}")));
    }
    if f == 0.0 {
        return Ok(((0..truth.n_samples()).collect(), Vec::new()));
    }
    let k = (1.0 / f).round() as usize;
    let folds = stratified_kfold(truth, k, RngSeed(seed).derive(7))?;
    Ok((folds.training(0), folds.holdout(0)))
}

fn standardize(x: &Array2<f64>, mean: &[f64], scale: &[f64]) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        for ((v, m), s) in row.iter_mut().zip(mean).zip(scale) {
            *v = (*v - m) / s;
        }
    }
    out
}

fn fit_mlp(a: &TrainArgs, feats: &FeatureMatrix, truth: &LabelMatrix, seed: u64) -> anyhow::Result<MlpModel> {
    let vocab = truth.vocab().clone();
    let loss = match a.loss.as_deref().unwrap_or("bce") {
        "bce" => LossKind::Bce,
        "hybrid" if vocab.weather_count() > 0 => LossKind::Hybrid { weather_count: vocab.weather_count() },
        "hybrid" => return Err(usage("--loss hybrid needs the planet labels (a weather block)")),
        other => return Err(usage(format!("unknown --loss `{other}` (expected bce or hybrid)"))),
    };
    let n = &a.net;
    let widths = if n.hidden.is_empty() { vec![64] } else { n.hidden.clone() };
    if widths.contains(&0) {
        return Err(usage("--hidden widths must be positive"));
    }
    let dropout = dropout_arg(n, 0.0)?;
    let hidden = widths
        .iter()
        .map(|&units| HiddenSpec { units, activation: Activation::Relu, batch_norm: n.batch_norm, dropout })
        .collect();
    let (train_rows, val_rows) = holdout(truth, n.val_fraction, seed)?;
    let config = train_config(n, loss, !val_rows.is_empty(), seed)?;

    let x = feats.values();
    let xt = x.select(ndarray::Axis(0), &train_rows);
    let d = x.ncols();
    let feature_mean: Vec<f64> = (0..d).map(|j| xt.column(j).mean().unwrap_or(0.0)).collect();
    let feature_scale: Vec<f64> = (0..d)
        .map(|j| {
            let s = xt.column(j).std(0.0);
            if s > 0.0 && s.is_finite() {
                s
            } else {
                1.0
            }
        })
        .collect();
    let xs = standardize(x, &feature_mean, &feature_scale);
    let y = truth.to_f64();
    let pick = |rows: &[usize]| (xs.select(ndarray::Axis(0), rows), y.select(ndarray::Axis(0), rows));
    let (x_train, y_train) = pick(&train_rows);
    let (x_val, y_val) = pick(&val_rows);
    let val = (!val_rows.is_empty()).then(|| (x_val.view(), y_val.view()));
    let spec = NetSpec::for_loss(d, hidden, truth.n_labels(), loss);
    let model = nn::train(&spec, x_train.view(), y_train.view(), val, &config)?;

    let thresholds = if val_rows.is_empty() {
        None
    } else {
        let probs = nn::predict(&model, x_val.view(), vocab.clone())?;
        let opt = optimize_thresholds(&probs, &truth.select_rows(&val_rows), 2.0, OptimizeMode::Coordinate)?;
        println!("validation sample F2 tuned: {:.6}", opt.sample_fbeta);
        Some(opt.thresholds.cutoffs().to_vec())
    };
    let h = &model.history;
    println!(
        "epochs run: {}, best epoch: {}, stopped early: {}",
        h.epochs.len(),
        h.best_epoch.map_or("-".to_string(), |e| e.to_string()),
        h.stopped_early
    );
    Ok(MlpModel {
        format: MLP_FORMAT.to_string(),
        version: MODEL_VERSION,
        vocab,
        feature_mean,
        feature_scale,
        thresholds,
        model,
    })
}

pub fn train(a: &TrainArgs, seed: u64, run: &mut Run) -> anyhow::Result<()> {
    let features_path = req(&a.features, "features")?;
    let truth_path = req(&a.truth, "truth")?;
    let out = req(&a.out, "out")?;
    let is_mlp = a.learner.learner.as_deref() == Some("mlp");
    if is_mlp {
        let l = &a.learner;
        if l.trees.is_some() || l.stages.is_some() || l.max_depth.is_some() || l.learning_rate.is_some() || l.lambda.is_some() {
            return Err(usage("--trees, --stages, --max-depth, --learning-rate and --lambda do not apply to mlp"));
        }
    } else if !net_unset(&a.net) || a.loss.is_some() {
        return Err(usage("network options apply only to --learner mlp"));
    }
    let spec = if is_mlp { None } else { Some(learner_spec(&a.learner)?) };
    let (_, feats, truth) = features_and_truth(features_path, truth_path, run)?;
    match spec {
        None => {
            let model = fit_mlp(a, &feats, &truth, seed)?;
            write_json(out, &model, run)?;
        }
        Some(spec) => {
            let model = multioutput_fit(&spec, &feats, &truth, RngSeed(seed))?;
            save_model(out, &model)?;
            run.output(out);
        }
    }
    println!(
        "trained {} on {} samples x {} features, {} labels",
        a.learner.learner.as_deref().unwrap_or("lda"),
        feats.n_samples(),
        feats.n_features(),
        truth.n_labels()
    );
    Ok(())
}

/// Base-model probabilities under `vocab`, rows in the first file's order.
fn load_stacked(
    paths: &[PathBuf],
    vocab: &Arc<LabelVocabulary>,
    run: &mut Run,
) -> anyhow::Result<(Vec<String>, Vec<ProbMatrix>)> {
    let mut models = Vec::with_capacity(paths.len());
    let mut first: Option<Vec<String>> = None;
    for path in paths {
        let (ids, probs) = inputs::probs(path, vocab, run)?;
        match &first {
            None => {
                first = Some(ids);
                models.push(probs);
            }
            Some(f) => {
                if ids.len() != f.len() {
                    bail!("{}: {} rows, but {} has {}", path.display(), ids.len(), paths[0].display(), f.len());
                }
                models.push(probs.select_rows(&inputs::align(f, &paths[0], &ids, path)?));
            }
        }
    }
    Ok((first.unwrap_or_default(), models))
}

pub fn stack(a: &StackArgs, seed: u64, run: &mut Run) -> anyhow::Result<()> {
    if a.pred.is_empty() {
        return Err(usage("stack needs at least one --pred"));
    }
    let truth_path = req(&a.truth, "truth")?;
    let out = req(&a.out, "out")?;
    let beta = beta_arg(a.beta)?;
    let n = &a.net;
    if n.hidden.len() > 1 {
        return Err(usage("the meta-learner has one hidden layer; give a single --hidden width (0 for none)"));
    }
    let vocab = inputs::vocab_from_probs(&a.pred[0])?;
    let (ids, models) = load_stacked(&a.pred, &vocab, run)?;
    let (tids, truth) = inputs::truth(truth_path, Some(&vocab), run)?;
    let truth = truth.select_rows(&inputs::align(&ids, &a.pred[0], &tids, truth_path)?);
    let features = StackedFeatures::from_models(&models)?;

    let (train_rows, val_rows) = match &a.folds {
        Some(path) => {
            if n.val_fraction.is_some() {
                return Err(usage("--folds and --val-fraction are mutually exclusive"));
            }
            run.input(path);
            let folds = io::load_folds(path, &ids)?;
            let last = folds.k() - 1;
            (folds.training(last), folds.holdout(last))
        }
        None => holdout(&truth, n.val_fraction, seed)?,
    };
    let defaults = MetaConfig::default();
    let config = MetaConfig {
        hidden_units: n.hidden.first().copied().unwrap_or(defaults.hidden_units),
        batch_norm: true,
        dropout: dropout_arg(n, defaults.dropout)?,
        train: train_config(n, LossKind::Bce, !val_rows.is_empty(), seed)?,
    };
    let train_x = features.select_rows(&train_rows);
    let train_y = truth.select_rows(&train_rows);
    let val_x = features.select_rows(&val_rows);
    let val_y = truth.select_rows(&val_rows);
    let val = (!val_rows.is_empty()).then_some((&val_x, &val_y));
    let meta = stack_train(&train_x, &train_y, val, &config)?;

    let thresholds = if val_rows.is_empty() {
        ThresholdVector::uniform(DEFAULT_CUTOFF, vocab.clone())?
    } else {
        let half = ThresholdVector::uniform(DEFAULT_CUTOFF, vocab.clone())?;
        for (path, m) in a.pred.iter().zip(&models) {
            let p = apply_thresholds(&m.select_rows(&val_rows), &half)?;
            println!("validation sample F{beta} {:.6}  {}", sample_fbeta(&p, &val_y, beta)?, path.display());
        }
        let probs = meta.predict(&val_x)?;
        let at_half = sample_fbeta(&apply_thresholds(&probs, &half)?, &val_y, beta)?;
        println!("validation sample F{beta} {at_half:.6}  stacked");
        let opt = optimize_thresholds(&probs, &val_y, beta, OptimizeMode::Coordinate)?;
        println!("validation sample F{beta} {:.6}  stacked, tuned cutoffs", opt.sample_fbeta);
        opt.thresholds
    };
    let model = StackModel {
        format: STACK_FORMAT.to_string(),
        version: MODEL_VERSION,
        beta,
        thresholds: thresholds.cutoffs().to_vec(),
        meta,
    };
    write_json(out, &model, run)?;
    println!("trained on {} samples, validated on {}", train_rows.len(), val_rows.len());
    Ok(())
}

fn model_format(path: &Path) -> anyhow::Result<(String, serde_json::Value)> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("{}: not a JSON model file", path.display()))?;
    let format = value
        .get("format")
        .and_then(|f| f.as_str())
        .ok_or_else(|| anyhow::anyhow!("{}: model file has no `format` field", path.display()))?
        .to_string();
    Ok((format, value))
}

fn check_version(path: &Path, version: u32) -> anyhow::Result<()> {
    if version != MODEL_VERSION {
        bail!("{}: model version {version} is not supported (expected {MODEL_VERSION})", path.display());
    }
    Ok(())
}

pub fn predict(a: &PredictArgs, _seed: u64, run: &mut Run) -> anyhow::Result<()> {
    let model_path = req(&a.model, "model")?;
    run.input(model_path);
    let (format, value) = model_format(model_path)?;
    let need_features = || -> anyhow::Result<&PathBuf> {
        if !a.pred.is_empty() {
            return Err(usage(format!("--pred is for stacked models; {format} models take --features")));
        }
        req(&a.features, "features")
    };
    let (ids, probs, cutoffs) = match format.as_str() {
        canopy_core::classical::multioutput::MODEL_FORMAT => {
            let fp = need_features()?;
            let model = load_model(model_path)?;
            let (ids, feats) = inputs::features(fp, run)?;
            (ids, multioutput_predict(&model, &feats)?, None)
        }
        MLP_FORMAT => {
            let fp = need_features()?;
            let model: MlpModel = serde_json::from_value(value).with_context(|| format!("{}", model_path.display()))?;
            check_version(model_path, model.version)?;
            let (ids, feats) = inputs::features(fp, run)?;
            if feats.n_features() != model.feature_mean.len() {
                bail!(
                    "{}: {} features, model expects {}",
                    fp.display(),
                    feats.n_features(),
                    model.feature_mean.len()
                );
            }
            let x = standardize(feats.values(), &model.feature_mean, &model.feature_scale);
            (ids, nn::predict(&model.model, x.view(), model.vocab.clone())?, model.thresholds)
        }
        STACK_FORMAT => {
            if a.features.is_some() {
                return Err(usage("stacked models take --pred files, not --features"));
            }
            let model: StackModel =
                serde_json::from_value(value).with_context(|| format!("{}", model_path.display()))?;
            check_version(model_path, model.version)?;
            if a.pred.len() != model.meta.n_models {
                return Err(usage(format!(
                    "model stacks {} base models, got {} --pred files",
                    model.meta.n_models,
                    a.pred.len()
                )));
            }
            let (ids, models) = load_stacked(&a.pred, &model.meta.vocab, run)?;
            let features = StackedFeatures::from_models(&models)?;
            (ids, model.meta.predict(&features)?, Some(model.thresholds))
        }
        other => bail!("{}: unknown model format `{other}`", model_path.display()),
    };
    emit(a.out.as_ref(), run, |w| io::write_probs(w, &ids, &probs))?;
    if let Some(tags_out) = &a.tags_out {
        let vocab = probs.vocab().clone();
        let cut = match cutoffs {
            Some(c) => ThresholdVector::new(c, vocab)?,
            None => ThresholdVector::uniform(DEFAULT_CUTOFF, vocab)?,
        };
        io::save_tags(tags_out, &ids, &apply_thresholds(&probs, &cut)?)?;
        run.output(tags_out);
    }
    Ok(())
}

fn preprocess_mode(a: &PreprocessArgs) -> anyhow::Result<PreprocessMode> {
    let from_backbone = |b: &str| {
        mode_for_model(b).ok_or_else(|| {
            let known: Vec<&str> = MODEL_MODES.iter().map(|(m, _)| *m).collect();
            usage(format!("unknown --backbone `{b}` (known: {})", known.join(", ")))
        })
    };
    match (&a.mode, &a.backbone) {
        (Some(m), None) => m.parse().map_err(|e: canopy_core::Error| usage(e.to_string())),
        (None, Some(b)) => from_backbone(b),
        (Some(m), Some(b)) => {
            let mode: PreprocessMode = m.parse().map_err(|e: canopy_core::Error| usage(e.to_string()))?;
            if from_backbone(b)? != mode {
                return Err(usage(format!("--mode {m} conflicts with --backbone {b}")));
            }
            Ok(mode)
        }
        (None, None) => Err(usage("give --mode or --backbone")),
    }
}

pub fn preprocess(a: &PreprocessArgs, seed: u64, run: &mut Run) -> anyhow::Result<()> {
    let input = req(&a.input, "in")?;
    let out = req(&a.out, "out")?;
    let mode = preprocess_mode(a)?;
    run.input(input);
    let (images, batched) = read_images_npy(input)?;
    let mut done = Vec::with_capacity(images.len());
    for (i, img) in images.iter().enumerate() {
        let img = if a.augment {
            let (aug, ops) = random_augment(img, RngSeed(seed).derive(i as u64));
            eprintln!("image {i}: {ops:?}");
            aug
        } else {
            img.clone()
        };
        done.push(prep(&img, mode)?);
    }
    write_images_npy(out, &done, batched)?;
    run.output(out);
    println!("{} image(s) preprocessed with {mode:?}", done.len());
    Ok(())
}
