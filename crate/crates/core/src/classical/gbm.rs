use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use super::tree::{tree_fit, Criterion, CutRule, FeatureSubset, Tree, TreeParams};
use crate::data::RngSeed;
use crate::error::{Error, Result};
use crate::nn::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GbmLoss {
    Squared,
    /// Binary log-loss on 0/1 targets; the model output is a log-odds.
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineSearch {
    /// One multiplier per leaf region. Exact for squared loss, a single
    /// Newton step for logistic loss.
    PerLeaf,
    /// One multiplier per stage, minimizing the loss along the fitted tree.
    PerStage,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbmParams {
    pub n_stages: usize,
    pub learning_rate: f64,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub loss: GbmLoss,
    pub line_search: LineSearch,
}

impl Default for GbmParams {
    fn default() -> Self {
        GbmParams {
            n_stages: 100,
            learning_rate: 0.1,
            max_depth: Some(3),
            min_samples_split: 2,
            loss: GbmLoss::Logistic,
            line_search: LineSearch::PerLeaf,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbmStage {
    pub tree: Tree,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbmModel {
    pub f0: f64,
    pub stages: Vec<GbmStage>,
    pub learning_rate: f64,
    pub loss: GbmLoss,
    /// Mean training loss after F₀ and after every stage.
    pub train_loss: Vec<f64>,
}

const P_CLAMP: f64 = 1e-12;

fn mean_loss(loss: GbmLoss, y: &[f64], f: &[f64]) -> f64 {
    let n = y.len() as f64;
    match loss {
        GbmLoss::Squared => y.iter().zip(f).map(|(y, f)| (y - f) * (y - f)).sum::<f64>() / n,
        GbmLoss::Logistic => {
            y.iter()
                .zip(f)
                .map(|(&y, &f)| {
                    let p = sigmoid(f).clamp(P_CLAMP, 1.0 - P_CLAMP);
                    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
                })
                .sum::<f64>()
                / n
        }
    }
}

/// Negative gradient of the loss with respect to F.
fn pseudo_residuals(loss: GbmLoss, y: &[f64], f: &[f64]) -> Vec<f64> {
    match loss {
        GbmLoss::Squared => y.iter().zip(f).map(|(y, f)| y - f).collect(),
        GbmLoss::Logistic => y.iter().zip(f).map(|(y, &f)| y - sigmoid(f)).collect(),
    }
}

/// Newton iterations for the stage multiplier along direction `h`.
fn logistic_stage_gamma(y: &[f64], f: &[f64], h: &[f64]) -> f64 {
    let mut gamma = 0.0;
    for _ in 0..20 {
        let (mut g, mut hess) = (0.0, 0.0);
        for i in 0..y.len() {
            let p = sigmoid(f[i] + gamma * h[i]);
            g += (y[i] - p) * h[i];
            hess += p * (1.0 - p) * h[i] * h[i];
        }
        if hess <= 1e-150 {
            break;
        }
        let step = g / hess;
        gamma += step;
        if step.abs() < 1e-10 {
            break;
        }
    }
    gamma
}

pub fn gbm_fit(x: ArrayView2<f64>, y: &[f64], params: &GbmParams, seed: RngSeed) -> Result<GbmModel> {
    let n = x.nrows();
    if n == 0 || y.len() != n {
        return Err(Error::shape(format!("{n} feature rows but {} targets", y.len())));
    }
    if params.n_stages == 0 {
        return Err(Error::invalid("boosting needs at least one stage"));
    }
    if !(params.learning_rate > 0.0 && params.learning_rate <= 1.0) {
        return Err(Error::invalid(format!("learning rate {} outside (0, 1]", params.learning_rate)));
    }
    if params.loss == GbmLoss::Logistic && y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::invalid("logistic loss needs 0/1 targets"));
    }
    let mean = y.iter().sum::<f64>() / n as f64;
    let f0 = match params.loss {
        GbmLoss::Squared => mean,
        GbmLoss::Logistic => {
            let p = mean.clamp(P_CLAMP, 1.0 - P_CLAMP);
            (p / (1.0 - p)).ln()
        }
    };
    let tree_params = TreeParams {
        criterion: Criterion::Mse,
        max_depth: params.max_depth,
        min_samples_split: params.min_samples_split,
        feature_subset: FeatureSubset::All,
        cut_rule: CutRule::Best,
    };
    let mut f = vec![f0; n];
    let mut train_loss = vec![mean_loss(params.loss, y, &f)];
    let mut stages = Vec::with_capacity(params.n_stages);
    let mut rng = seed.rng();
    for m in 0..params.n_stages {
        let r = pseudo_residuals(params.loss, y, &f);
        if let Some(i) = r.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("stage {m}: residual {i} is not finite")));
        }
        let mut tree = tree_fit(x, &r, &tree_params, &mut rng)?;
        let rows: Vec<Vec<f64>> = x.rows().into_iter().map(|r| r.to_vec()).collect();
        let gamma = match (params.loss, params.line_search) {
            (GbmLoss::Squared, LineSearch::PerLeaf) => 1.0,
            (GbmLoss::Logistic, LineSearch::PerLeaf) => {
                let leaves = tree.leaf_count();
                let (mut num, mut den) = (vec![0.0; leaves], vec![0.0; leaves]);
                for (i, row) in rows.iter().enumerate() {
                    let leaf = tree.leaf_index(row);
                    let p = sigmoid(f[i]);
                    num[leaf] += r[i];
                    den[leaf] += p * (1.0 - p);
                }
                let values: Vec<f64> =
                    num.iter().zip(&den).map(|(&a, &b)| if b.abs() < 1e-150 { 0.0 } else { a / b }).collect();
                tree.set_leaf_values(&values)?;
                1.0
            }
            (GbmLoss::Squared, LineSearch::PerStage) => {
                let h: Vec<f64> = rows.iter().map(|row| tree.predict_row(row)).collect();
                let hh: f64 = h.iter().map(|v| v * v).sum();
                if hh == 0.0 {
                    0.0
                } else {
                    h.iter().zip(&r).map(|(h, r)| h * r).sum::<f64>() / hh
                }
            }
            (GbmLoss::Logistic, LineSearch::PerStage) => {
                let h: Vec<f64> = rows.iter().map(|row| tree.predict_row(row)).collect();
                logistic_stage_gamma(y, &f, &h)
            }
        };
        if !gamma.is_finite() {
            return Err(Error::Numerical(format!("stage {m}: multiplier is not finite")));
        }
        for (i, row) in rows.iter().enumerate() {
            f[i] += params.learning_rate * gamma * tree.predict_row(row);
        }
        train_loss.push(mean_loss(params.loss, y, &f));
        stages.push(GbmStage { tree, gamma });
    }
    Ok(GbmModel { f0, stages, learning_rate: params.learning_rate, loss: params.loss, train_loss })
}

impl GbmModel {
    /// Raw additive output F(x).
    pub fn decision_function(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        if let Some(s) = self.stages.first() {
            s.tree.check_width(x)?;
        }
        Ok(x.rows()
            .into_iter()
            .map(|r| {
                let row = r.to_vec();
                self.f0
                    + self
                        .stages
                        .iter()
                        .map(|s| self.learning_rate * s.gamma * s.tree.predict_row(&row))
                        .sum::<f64>()
            })
            .collect())
    }

    /// F(x) for squared loss, σ(F(x)) for logistic loss.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        let f = self.decision_function(x)?;
        Ok(match self.loss {
            GbmLoss::Squared => f,
            GbmLoss::Logistic => f.into_iter().map(sigmoid).collect(),
        })
    }
}
