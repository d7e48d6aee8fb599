//! Weighted majority vote and stacking on out-of-fold probabilities.

use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{LabelMatrix, LabelVocabulary, ProbMatrix};
use crate::error::{Error, Result};
use crate::nn::{self, Activation, HiddenSpec, LossKind, NetSpec, TrainConfig, TrainedModel};
use crate::split::FoldAssignment;

/// Positive integer weight per model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelWeights(Vec<u32>);

impl ModelWeights {
    pub fn new(weights: Vec<u32>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::invalid("no model weights"));
        }
        if let Some(i) = weights.iter().position(|&w| w == 0) {
            return Err(Error::invalid(format!("weight of model {i} must be at least 1")));
        }
        Ok(ModelWeights(weights))
    }

    pub fn uniform(n_models: usize) -> Result<Self> {
        Self::new(vec![1; n_models])
    }

    pub fn weights(&self) -> &[u32] {
        &self.0
    }

    pub fn total(&self) -> u64 {
        self.0.iter().map(|&w| u64::from(w)).sum()
    }
}

/// Label is 1 iff its weighted vote exceeds half the total weight. Ties
/// (possible when the total is even) are negative.
pub fn weighted_vote(preds: &[LabelMatrix], weights: &ModelWeights) -> Result<LabelMatrix> {
    let first = preds.first().ok_or_else(|| Error::invalid("no models to vote"))?;
    if preds.len() != weights.0.len() {
        return Err(Error::shape(format!("{} models but {} weights", preds.len(), weights.0.len())));
    }
    for (m, p) in preds.iter().enumerate().skip(1) {
        if p.values().dim() != first.values().dim() || p.vocab() != first.vocab() {
            return Err(Error::shape(format!("model {m} differs from model 0 in shape or labels")));
        }
    }
    let total = weights.total();
    let mut votes = Array2::<u64>::zeros(first.values().dim());
    for (p, &w) in preds.iter().zip(&weights.0) {
        votes.zip_mut_with(p.values(), |v, &y| *v += u64::from(w) * u64::from(y));
    }
    LabelMatrix::new(votes.mapv(|v| u8::from(2 * v > total)), first.vocab().clone())
}

/// Base-model probabilities for stacking, `n_samples × (n_models · n_labels)`.
/// Column `m · n_labels + l` holds model `m`'s probability for label `l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackedFeatures {
    values: Array2<f64>,
    n_models: usize,
    vocab: Arc<LabelVocabulary>,
}

impl StackedFeatures {
    pub fn new(values: Array2<f64>, n_models: usize, vocab: Arc<LabelVocabulary>) -> Result<Self> {
        if n_models == 0 || values.ncols() != n_models * vocab.len() {
            return Err(Error::shape(format!(
                "{} columns cannot hold {n_models} models × {} labels",
                values.ncols(),
                vocab.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("stacked probability {v} outside [0, 1]")));
        }
        Ok(StackedFeatures { values, n_models, vocab })
    }

    /// Concatenates full-dataset predictions of several models.
    pub fn from_models(models: &[ProbMatrix]) -> Result<Self> {
        let first = models.first().ok_or_else(|| Error::invalid("no models to stack"))?;
        let (n, l) = first.values().dim();
        for (m, p) in models.iter().enumerate() {
            if p.values().dim() != (n, l) || p.vocab() != first.vocab() {
                return Err(Error::shape(format!("model {m} differs from model 0 in shape or labels")));
            }
        }
        let values = Array2::from_shape_fn((n, l * models.len()), |(i, c)| models[c / l].values()[[i, c % l]]);
        Self::new(values, models.len(), first.vocab().clone())
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn n_models(&self) -> usize {
        self.n_models
    }

    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn vocab(&self) -> &Arc<LabelVocabulary> {
        &self.vocab
    }

    /// Probabilities of model `m`.
    pub fn model(&self, m: usize) -> Result<ProbMatrix> {
        let l = self.vocab.len();
        if m >= self.n_models {
            return Err(Error::invalid(format!("model {m} out of range")));
        }
        ProbMatrix::new(self.values.slice(ndarray::s![.., m * l..(m + 1) * l]).to_owned(), self.vocab.clone())
    }

    pub fn select_rows(&self, rows: &[usize]) -> StackedFeatures {
        StackedFeatures {
            values: self.values.select(ndarray::Axis(0), rows),
            n_models: self.n_models,
            vocab: self.vocab.clone(),
        }
    }
}

/// One fold's holdout predictions: row `r` of `probs` belongs to sample `rows[r]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HoldoutChunk {
    pub rows: Vec<usize>,
    pub probs: ProbMatrix,
}

/// Cuts each fold model's full-dataset predictions down to that fold's holdout rows.
pub fn holdout_chunks(per_fold: &[ProbMatrix], folds: &FoldAssignment) -> Result<Vec<HoldoutChunk>> {
    if per_fold.len() != folds.k() {
        return Err(Error::shape(format!("{} fold predictions for {} folds", per_fold.len(), folds.k())));
    }
    per_fold
        .iter()
        .enumerate()
        .map(|(f, p)| {
            if p.n_samples() != folds.n_samples() {
                return Err(Error::shape(format!("fold {f} predictions have {} rows", p.n_samples())));
            }
            let rows = folds.holdout(f);
            Ok(HoldoutChunk { probs: p.select_rows(&rows), rows })
        })
        .collect()
}

/// Stacks out-of-fold predictions: `per_model[m]` lists model `m`'s holdout
/// chunks, which together must cover every sample exactly once.
pub fn assemble_oof(n_samples: usize, per_model: &[Vec<HoldoutChunk>]) -> Result<StackedFeatures> {
    let vocab = per_model
        .iter()
        .flatten()
        .next()
        .map(|c| c.probs.vocab().clone())
        .ok_or_else(|| Error::invalid("no out-of-fold predictions"))?;
    let l = vocab.len();
    let mut values = Array2::<f64>::zeros((n_samples, l * per_model.len()));
    for (m, chunks) in per_model.iter().enumerate() {
        let mut seen = vec![false; n_samples];
        for chunk in chunks {
            if chunk.probs.vocab() != &vocab {
                return Err(Error::shape(format!("model {m} uses a different label set")));
            }
            if chunk.rows.len() != chunk.probs.n_samples() {
                return Err(Error::shape(format!(
                    "model {m}: {} row ids for {} prediction rows",
                    chunk.rows.len(),
                    chunk.probs.n_samples()
                )));
            }
            for (r, &i) in chunk.rows.iter().enumerate() {
                if i >= n_samples {
                    return Err(Error::invalid(format!("model {m}: sample {i} out of range")));
                }
                if seen[i] {
                    return Err(Error::invalid(format!("model {m}: sample {i} predicted by more than one fold")));
                }
                seen[i] = true;
                for j in 0..l {
                    values[[i, m * l + j]] = chunk.probs.values()[[r, j]];
                }
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::invalid(format!("model {m}: sample {i} has no out-of-fold prediction")));
        }
    }
    StackedFeatures::new(values, per_model.len(), vocab)
}

/// Meta-learner layout and training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaConfig {
    pub hidden_units: usize,
    pub batch_norm: bool,
    pub dropout: f64,
    pub train: TrainConfig,
}

impl Default for MetaConfig {
    fn default() -> Self {
        MetaConfig {
            hidden_units: 64,
            batch_norm: true,
            dropout: 0.25,
            train: TrainConfig { loss: LossKind::Bce, ..TrainConfig::default() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaModel {
    pub model: TrainedModel,
    pub n_models: usize,
    pub vocab: Arc<LabelVocabulary>,
}

impl MetaModel {
    pub fn predict(&self, features: &StackedFeatures) -> Result<ProbMatrix> {
        if features.n_models != self.n_models || features.vocab != self.vocab {
            return Err(Error::shape("stacked features do not match the meta-model"));
        }
        nn::predict(&self.model, features.values.view(), self.vocab.clone())
    }
}

/// Trains a sigmoid-output network on stacked base-model probabilities.
pub fn stack_train(
    features: &StackedFeatures,
    truth: &LabelMatrix,
    val: Option<(&StackedFeatures, &LabelMatrix)>,
    config: &MetaConfig,
) -> Result<MetaModel> {
    if features.n_samples() != truth.n_samples() || features.vocab() != truth.vocab() {
        return Err(Error::shape("stacked features and truth differ in rows or labels"));
    }
    if let Some((vf, vt)) = val {
        if vf.n_models != features.n_models || vf.n_samples() != vt.n_samples() || vf.vocab() != truth.vocab() {
            return Err(Error::shape("validation features do not match training features"));
        }
    }
    if config.train.loss != LossKind::Bce {
        return Err(Error::invalid("the meta-learner uses binary cross-entropy"));
    }
    let hidden = if config.hidden_units == 0 {
        Vec::new()
    } else {
        vec![HiddenSpec {
            units: config.hidden_units,
            activation: Activation::Relu,
            batch_norm: config.batch_norm,
            dropout: config.dropout,
        }]
    };
    let spec = NetSpec::new(features.values.ncols(), hidden, truth.n_labels(), Activation::Sigmoid);
    let y = truth.to_f64();
    let val_y = val.map(|(_, t)| t.to_f64());
    let val_views = val.zip(val_y.as_ref()).map(|((f, _), y)| (f.values.view(), y.view()));
    let model = nn::train(&spec, features.values.view(), y.view(), val_views, &config.train)?;
    Ok(MetaModel { model, n_models: features.n_models, vocab: features.vocab.clone() })
}
