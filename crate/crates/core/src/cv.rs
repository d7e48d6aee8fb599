//! k-fold evaluation of classical learners.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classical::{multioutput_fit, multioutput_predict, LearnerSpec};
use crate::data::{FeatureMatrix, LabelMatrix, ProbMatrix, RngSeed};
use crate::error::{Error, Result};
use crate::metrics::{report, MetricsReport, ReportRow};
use crate::nn::{loss, LossKind};
use crate::split::{stratified_kfold, FoldAssignment};
use crate::threshold::{apply_thresholds, ThresholdVector, DEFAULT_CUTOFF};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    /// Holdout report with predictions cut at 0.5.
    pub report: MetricsReport,
    /// Mean binary cross-entropy of the holdout probabilities.
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub assignment: FoldAssignment,
    pub folds: Vec<FoldResult>,
    /// Arithmetic mean of the fold Total rows.
    pub average: ReportRow,
    pub average_loss: f64,
}

/// Trains on k − 1 folds and evaluates on the remaining one, for every fold.
pub fn cv_evaluate(
    spec: &LearnerSpec,
    features: &FeatureMatrix,
    truth: &LabelMatrix,
    k: usize,
    seed: RngSeed,
) -> Result<CvResult> {
    if features.n_samples() != truth.n_samples() {
        return Err(Error::shape(format!(
            "{} feature rows but {} label rows",
            features.n_samples(),
            truth.n_samples()
        )));
    }
    let assignment = stratified_kfold(truth, k, seed)?;
    cv_evaluate_with(spec, features, truth, &assignment, seed)
}

/// As [`cv_evaluate`] with a given fold assignment.
pub fn cv_evaluate_with(
    spec: &LearnerSpec,
    features: &FeatureMatrix,
    truth: &LabelMatrix,
    assignment: &FoldAssignment,
    seed: RngSeed,
) -> Result<CvResult> {
    if assignment.n_samples() != truth.n_samples() {
        return Err(Error::shape("fold assignment does not cover the samples"));
    }
    let cut = ThresholdVector::uniform(DEFAULT_CUTOFF, truth.vocab().clone())?;
    let folds = (0..assignment.k())
        .into_par_iter()
        .map(|fold| {
            let run = || -> Result<FoldResult> {
                let train = assignment.training(fold);
                let hold = assignment.holdout(fold);
                let model = multioutput_fit(
                    spec,
                    &features.select_rows(&train),
                    &truth.select_rows(&train),
                    seed.derive(1000 + fold as u64),
                )?;
                let probs: ProbMatrix = multioutput_predict(&model, &features.select_rows(&hold))?;
                let hold_truth = truth.select_rows(&hold);
                let pred = apply_thresholds(&probs, &cut)?;
                Ok(FoldResult {
                    fold,
                    report: report(&pred, &hold_truth)?,
                    loss: loss(probs.values().view(), hold_truth.to_f64().view(), LossKind::Bce)?,
                })
            };
            run().map_err(|e| Error::Fold { fold, source: Box::new(e) })
        })
        .collect::<Result<Vec<_>>>()?;

    let k = folds.len() as f64;
    let mean = |f: fn(&ReportRow) -> f64| folds.iter().map(|r| f(&r.report.total)).sum::<f64>() / k;
    let average = ReportRow {
        label: "Average".to_string(),
        precision: mean(|r| r.precision),
        recall: mean(|r| r.recall),
        accuracy: mean(|r| r.accuracy),
        f1: mean(|r| r.f1),
        f2: mean(|r| r.f2),
    };
    let average_loss = folds.iter().map(|r| r.loss).sum::<f64>() / k;
    Ok(CvResult { assignment: assignment.clone(), folds, average, average_loss })
}
