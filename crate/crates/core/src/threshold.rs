//! Precision-recall sweeps and per-label decision cutoffs.
//!
//! A score is classified positive when `score >= cutoff`. Candidate cutoffs
//! for a label are the distinct scores observed for it.

use std::sync::Arc;

use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{LabelMatrix, LabelVocabulary, ProbMatrix};
use crate::error::{Error, Result};
use crate::metrics::{fbeta_counts, ratio};

/// Cutoff used for labels that cannot be tuned (no positives).
pub const DEFAULT_CUTOFF: f64 = 0.5;

/// Smallest score gain accepted as an improvement.
pub const IMPROVEMENT_EPS: f64 = 1e-12;

/// Pass limit for coordinate ascent.
pub const MAX_PASSES: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdVector {
    cutoffs: Vec<f64>,
    vocab: Arc<LabelVocabulary>,
}

impl ThresholdVector {
    pub fn new(cutoffs: Vec<f64>, vocab: Arc<LabelVocabulary>) -> Result<Self> {
        if cutoffs.len() != vocab.len() {
            return Err(Error::shape(format!(
                "{} cutoffs for {} labels",
                cutoffs.len(),
                vocab.len()
            )));
        }
        if let Some(c) = cutoffs.iter().find(|c| !(0.0..=1.0).contains(*c)) {
            return Err(Error::invalid(format!("cutoff {c} outside [0, 1]")));
        }
        Ok(ThresholdVector { cutoffs, vocab })
    }

    pub fn uniform(value: f64, vocab: Arc<LabelVocabulary>) -> Result<Self> {
        ThresholdVector::new(vec![value; vocab.len()], vocab)
    }

    pub fn cutoffs(&self) -> &[f64] {
        &self.cutoffs
    }

    pub fn vocab(&self) -> &Arc<LabelVocabulary> {
        &self.vocab
    }
}

/// One operating point of a precision-recall curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Points in strictly increasing threshold order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub positive_count: usize,
}

/// Sample indices sorted by descending score, grouped by equal score.
fn descending_groups(scores: ArrayView1<'_, f64>) -> Vec<(f64, Vec<usize>)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut groups: Vec<(f64, Vec<usize>)> = Vec::new();
    for i in order {
        match groups.last_mut() {
            Some((s, members)) if *s == scores[i] => members.push(i),
            _ => groups.push((scores[i], vec![i])),
        }
    }
    groups
}

/// One point per distinct score. A cutoff of 0 classifies exactly like the
/// smallest score, so it never adds a separate point.
pub fn pr_curve(scores: ArrayView1<'_, f64>, truth: ArrayView1<'_, u8>) -> Result<PrCurve> {
    if scores.len() != truth.len() {
        return Err(Error::shape(format!(
            "{} scores for {} truth values",
            scores.len(),
            truth.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("NaN score"));
    }
    let positives = truth.iter().filter(|&&t| t == 1).count();
    if positives == 0 {
        return Err(Error::invalid("precision-recall curve needs at least one positive"));
    }
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0u64, 0u64);
    for (score, members) in descending_groups(scores) {
        for i in members {
            if truth[i] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        points.push(PrPoint {
            threshold: score,
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, positives as u64),
        });
    }
    points.reverse();
    Ok(PrCurve {
        points,
        positive_count: positives,
    })
}

/// Entry is 1 iff `prob >= cutoff` for its label.
pub fn apply_thresholds(probs: &ProbMatrix, thresholds: &ThresholdVector) -> Result<LabelMatrix> {
    if probs.n_labels() != thresholds.cutoffs.len() {
        return Err(Error::shape(format!(
            "{} labels but {} cutoffs",
            probs.n_labels(),
            thresholds.cutoffs.len()
        )));
    }
    let cut = &thresholds.cutoffs;
    let values = Array2::from_shape_fn(probs.values().dim(), |(i, j)| {
        u8::from(probs.values()[[i, j]] >= cut[j])
    });
    LabelMatrix::new(values, Arc::clone(probs.vocab()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptimizeMode {
    /// Cyclic coordinate ascent on sample-averaged F-beta.
    Coordinate,
    /// Each label maximizes its own F-beta independently.
    PerClass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdOptimum {
    pub thresholds: ThresholdVector,
    /// The mode's objective at the returned cutoffs: sample F-beta for
    /// coordinate mode, macro F-beta for per-class mode.
    pub score: f64,
    /// Sample-averaged F-beta at the returned cutoffs, for either mode.
    pub sample_fbeta: f64,
    /// Per-label F-beta at the returned cutoffs.
    pub per_class: Vec<f64>,
    /// Sample F-beta after each coordinate pass (empty for per-class mode).
    pub pass_scores: Vec<f64>,
}

/// Chooses per-label cutoffs maximizing F-beta on `(probs, truth)`.
///
/// Labels without positives keep [`DEFAULT_CUTOFF`]. Ties go to the
/// smallest cutoff.
pub fn optimize_thresholds(
    probs: &ProbMatrix,
    truth: &LabelMatrix,
    beta: f64,
    mode: OptimizeMode,
) -> Result<ThresholdOptimum> {
    if probs.n_samples() == 0 {
        return Err(Error::invalid("cannot tune thresholds on an empty dataset"));
    }
    if probs.values().dim() != truth.values().dim() || probs.vocab() != truth.vocab() {
        return Err(Error::shape("probabilities and truth differ in shape or vocabulary"));
    }
    if !(beta > 0.0) {
        return Err(Error::invalid(format!("beta must be positive, got {beta}")));
    }
    let positives = truth.positives_per_label();
    let (cutoffs, pass_scores) = match mode {
        OptimizeMode::PerClass => {
            let cutoffs = (0..probs.n_labels())
                .into_par_iter()
                .map(|j| {
                    if positives[j] == 0 {
                        DEFAULT_CUTOFF
                    } else {
                        best_class_cutoff(probs.column(j), truth.column(j), beta)
                    }
                })
                .collect();
            (cutoffs, Vec::new())
        }
        OptimizeMode::Coordinate => coordinate_ascent(probs, truth, beta, &positives),
    };
    let thresholds = ThresholdVector::new(cutoffs, Arc::clone(probs.vocab()))?;
    let pred = apply_thresholds(probs, &thresholds)?;
    let per_class_table = crate::metrics::confusion(&pred, truth, crate::metrics::Orientation::PerClass)?;
    let per_class: Vec<f64> = (0..per_class_table.len()).map(|j| per_class_table.fbeta(j, beta)).collect();
    let sample_fbeta = crate::metrics::sample_fbeta(&pred, truth, beta)?;
    let score = match mode {
        OptimizeMode::Coordinate => sample_fbeta,
        OptimizeMode::PerClass => per_class.iter().sum::<f64>() / per_class.len().max(1) as f64,
    };
    Ok(ThresholdOptimum {
        thresholds,
        score,
        sample_fbeta,
        per_class,
        pass_scores,
    })
}

/// Cutoff maximizing one label's own F-beta over its observed scores.
fn best_class_cutoff(scores: ArrayView1<'_, f64>, truth: ArrayView1<'_, u8>, beta: f64) -> f64 {
    let positives = truth.iter().filter(|&&t| t == 1).count() as u64;
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut best = (f64::NEG_INFINITY, DEFAULT_CUTOFF);
    for (score, members) in descending_groups(scores) {
        for i in members {
            if truth[i] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        let f = fbeta_counts(tp, fp, positives - tp, beta);
        // descending sweep: `>=` lets a tie move to the smaller cutoff
        if f >= best.0 {
            best = (f, score);
        }
    }
    best.1
}

/// Per-sample counts of the current hard predictions.
struct SampleCounts {
    tp: Vec<u64>,
    fp: Vec<u64>,
    fn_: Vec<u64>,
}

impl SampleCounts {
    fn term(&self, i: usize, beta: f64) -> f64 {
        fbeta_counts(self.tp[i], self.fp[i], self.fn_[i], beta)
    }

    fn total(&self, beta: f64) -> f64 {
        (0..self.tp.len()).map(|i| self.term(i, beta)).sum()
    }

    fn add(&mut self, i: usize, predicted: bool, truth: bool, sign: i64) {
        let slot = match (predicted, truth) {
            (true, true) => &mut self.tp[i],
            (true, false) => &mut self.fp[i],
            (false, true) => &mut self.fn_[i],
            (false, false) => return,
        };
        *slot = (*slot as i64 + sign) as u64;
    }
}

fn coordinate_ascent(
    probs: &ProbMatrix,
    truth: &LabelMatrix,
    beta: f64,
    positives: &[usize],
) -> (Vec<f64>, Vec<f64>) {
    let (n, k) = probs.values().dim();
    let p = probs.values();
    let t = truth.values();
    let mut cutoffs = vec![DEFAULT_CUTOFF; k];
    let mut counts = SampleCounts {
        tp: vec![0; n],
        fp: vec![0; n],
        fn_: vec![0; n],
    };
    for i in 0..n {
        for j in 0..k {
            counts.add(i, p[[i, j]] >= cutoffs[j], t[[i, j]] == 1, 1);
        }
    }
    let mut current = counts.total(beta);
    let groups: Vec<Vec<(f64, Vec<usize>)>> =
        (0..k).map(|j| descending_groups(probs.column(j))).collect();

    let mut pass_scores = Vec::new();
    while pass_scores.len() < MAX_PASSES {
        let mut improved = false;
        for j in (0..k).filter(|&j| positives[j] > 0) {
            // drop label j's contribution: everything predicted negative
            let mut running = current;
            for i in 0..n {
                if p[[i, j]] >= cutoffs[j] {
                    let before = counts.term(i, beta);
                    counts.add(i, true, t[[i, j]] == 1, -1);
                    counts.add(i, false, t[[i, j]] == 1, 1);
                    running += counts.term(i, beta) - before;
                }
            }
            // sweep cutoffs downward, flipping samples to positive
            let mut best: Option<(f64, f64)> = None;
            for (score, members) in &groups[j] {
                for &i in members {
                    let before = counts.term(i, beta);
                    counts.add(i, false, t[[i, j]] == 1, -1);
                    counts.add(i, true, t[[i, j]] == 1, 1);
                    running += counts.term(i, beta) - before;
                }
                // descending sweep: a tie moves to the smaller cutoff
                best = match best {
                    Some((b, c)) if running < b - IMPROVEMENT_EPS => Some((b, c)),
                    Some((b, _)) if running <= b + IMPROVEMENT_EPS => Some((b.max(running), *score)),
                    _ => Some((running, *score)),
                };
            }
            let chosen = match best {
                Some((b, c)) if b > current + IMPROVEMENT_EPS => {
                    improved = true;
                    c
                }
                _ => cutoffs[j],
            };
            // every sample is now predicted positive for j; restore the chosen cutoff
            for i in 0..n {
                if p[[i, j]] < chosen {
                    counts.add(i, true, t[[i, j]] == 1, -1);
                    counts.add(i, false, t[[i, j]] == 1, 1);
                }
            }
            cutoffs[j] = chosen;
            current = counts.total(beta);
        }
        pass_scores.push(current / n as f64);
        if !improved {
            break;
        }
    }
    (cutoffs, pass_scores)
}
