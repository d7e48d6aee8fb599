use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::forest::{forest_fit, ForestModel, ForestParams};
use super::gbm::{gbm_fit, GbmLoss, GbmModel, GbmParams};
use super::lda::{lda_fit, LdaModel, DEFAULT_LAMBDA};
use crate::data::{FeatureMatrix, LabelMatrix, LabelVocabulary, ProbMatrix, RngSeed};
use crate::error::{Error, Result};

pub const MODEL_FORMAT: &str = "canopy-multioutput";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "learner", rename_all = "snake_case")]
pub enum LearnerSpec {
    Lda { lambda: f64 },
    RandomForest(ForestParams),
    ExtraTrees(ForestParams),
    Gbm(GbmParams),
    /// Predicts each label's training prevalence.
    Prior,
}

impl LearnerSpec {
    /// Default hyperparameters for `lda`, `rf`, `extra`, `gbm` or `prior`.
    pub fn from_name(name: &str) -> Result<Self> {
        Ok(match name {
            "lda" => LearnerSpec::Lda { lambda: DEFAULT_LAMBDA },
            "rf" => LearnerSpec::RandomForest(ForestParams::random_forest(100)),
            "extra" => LearnerSpec::ExtraTrees(ForestParams::extra_trees()),
            "gbm" => LearnerSpec::Gbm(GbmParams::default()),
            "prior" => LearnerSpec::Prior,
            other => {
                return Err(Error::invalid(format!(
                    "unknown learner `{other}` (expected lda, rf, extra, gbm or prior)"
                )))
            }
        })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LearnerSpec::Lda { lambda } if !(*lambda >= 0.0 && lambda.is_finite()) => {
                Err(Error::invalid(format!("ridge term must be non-negative, got {lambda}")))
            }
            LearnerSpec::RandomForest(p) | LearnerSpec::ExtraTrees(p) if p.n_estimators == 0 => {
                Err(Error::invalid("forest needs at least one tree"))
            }
            LearnerSpec::Gbm(p) if p.loss != GbmLoss::Logistic => {
                Err(Error::invalid("binary boosting needs the logistic loss"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum BinaryModel {
    /// Used when a label column has a single class, or a class LDA cannot
    /// estimate.
    Constant { p: f64 },
    Lda(LdaModel),
    Forest(ForestModel),
    Gbm(GbmModel),
}

impl BinaryModel {
    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        match self {
            BinaryModel::Constant { p } => Ok(vec![*p; x.nrows()]),
            BinaryModel::Lda(m) => m.predict_proba(x),
            BinaryModel::Forest(m) => m.predict_proba(x),
            BinaryModel::Gbm(m) => m.predict(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiOutputModel {
    pub format: String,
    pub version: u32,
    pub spec: LearnerSpec,
    pub vocab: Arc<LabelVocabulary>,
    pub n_features: usize,
    pub models: Vec<BinaryModel>,
}

fn fit_binary(spec: &LearnerSpec, x: ArrayView2<f64>, y: &[f64], seed: RngSeed) -> Result<BinaryModel> {
    let positives = y.iter().filter(|&&v| v > 0.5).count();
    let prevalence = positives as f64 / y.len() as f64;
    // LDA needs two samples per class for a within-class scatter
    let lda_short = matches!(spec, LearnerSpec::Lda { .. }) && positives.min(y.len() - positives) < 2;
    if positives == 0 || positives == y.len() || lda_short || matches!(spec, LearnerSpec::Prior) {
        return Ok(BinaryModel::Constant { p: prevalence });
    }
    Ok(match spec {
        LearnerSpec::Lda { lambda } => {
            let labels: Vec<usize> = y.iter().map(|&v| usize::from(v > 0.5)).collect();
            BinaryModel::Lda(lda_fit(x, &labels, None, *lambda)?)
        }
        LearnerSpec::RandomForest(p) | LearnerSpec::ExtraTrees(p) => BinaryModel::Forest(forest_fit(x, y, p, seed)?),
        LearnerSpec::Gbm(p) => BinaryModel::Gbm(gbm_fit(x, y, p, seed)?),
        LearnerSpec::Prior => unreachable!("handled above"),
    })
}

/// One independent binary model per label; label `l` draws from `seed.derive(l)`.
pub fn multioutput_fit(
    spec: &LearnerSpec,
    features: &FeatureMatrix,
    truth: &LabelMatrix,
    seed: RngSeed,
) -> Result<MultiOutputModel> {
    spec.validate()?;
    if features.n_samples() != truth.n_samples() {
        return Err(Error::shape(format!(
            "{} feature rows but {} label rows",
            features.n_samples(),
            truth.n_samples()
        )));
    }
    if truth.n_samples() == 0 {
        return Err(Error::invalid("no training samples"));
    }
    let x = features.values().view();
    let models = (0..truth.n_labels())
        .into_par_iter()
        .map(|l| {
            let y: Vec<f64> = truth.column(l).iter().map(|&v| f64::from(v)).collect();
            fit_binary(spec, x, &y, seed.derive(l as u64)).map_err(|e| {
                Error::invalid(format!("label `{}`: {e}", truth.vocab().names()[l]))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MultiOutputModel {
        format: MODEL_FORMAT.to_string(),
        version: MODEL_VERSION,
        spec: spec.clone(),
        vocab: truth.vocab().clone(),
        n_features: features.n_features(),
        models,
    })
}

pub fn multioutput_predict(model: &MultiOutputModel, features: &FeatureMatrix) -> Result<ProbMatrix> {
    if features.n_features() != model.n_features {
        return Err(Error::shape(format!(
            "model expects {} features, got {}",
            model.n_features,
            features.n_features()
        )));
    }
    let x = features.values().view();
    let cols = model
        .models
        .par_iter()
        .map(|m| m.predict_proba(x))
        .collect::<Result<Vec<_>>>()?;
    let values = Array2::from_shape_fn((features.n_samples(), cols.len()), |(i, l)| cols[l][i].clamp(0.0, 1.0));
    ProbMatrix::new(values, model.vocab.clone())
}

pub fn save_model(path: impl AsRef<Path>, model: &MultiOutputModel) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer(BufWriter::new(file), model)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<MultiOutputModel> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let model: MultiOutputModel = serde_json::from_reader(BufReader::new(file))?;
    if model.format != MODEL_FORMAT || model.version != MODEL_VERSION {
        return Err(Error::invalid(format!(
            "{}: unsupported model file ({} v{})",
            path.display(),
            model.format,
            model.version
        )));
    }
    if model.models.len() != model.vocab.len() {
        return Err(Error::invalid(format!("{}: model count does not match labels", path.display())));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_column_gives_prevalence() {
        let vocab = Arc::new(LabelVocabulary::new(vec!["a", "b"], 0).unwrap());
        let truth = LabelMatrix::from_rows(&[vec![1, 0], vec![1, 1], vec![1, 0], vec![1, 1]], vocab).unwrap();
        let features = FeatureMatrix::new(Array2::from_shape_fn((4, 2), |(i, j)| (i + j) as f64), None).unwrap();
        let model = multioutput_fit(&LearnerSpec::Prior, &features, &truth, RngSeed(0)).unwrap();
        let p = multioutput_predict(&model, &features).unwrap();
        assert!(p.column(0).iter().all(|&v| v == 1.0));
        assert!(p.column(1).iter().all(|&v| v == 0.5));
        assert!(LearnerSpec::from_name("svm").is_err());
    }
}
