use ndarray::ArrayView2;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{tree_fit_rows, Criterion, CutRule, FeatureSubset, Tree, TreeParams};
use crate::data::RngSeed;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForestVariant {
    /// Bootstrap resampling with best splits.
    RandomForest,
    /// Whole learning sample with random cut-points.
    ExtraTrees,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestParams {
    pub variant: ForestVariant,
    pub n_estimators: usize,
    pub criterion: Criterion,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub max_features: FeatureSubset,
    pub bootstrap: bool,
}

impl ForestParams {
    pub fn random_forest(n_estimators: usize) -> Self {
        ForestParams {
            variant: ForestVariant::RandomForest,
            n_estimators,
            criterion: Criterion::Gini,
            max_depth: None,
            min_samples_split: 2,
            max_features: FeatureSubset::Sqrt,
            bootstrap: true,
        }
    }

    /// 200 gini trees on the whole sample.
    pub fn extra_trees() -> Self {
        ForestParams {
            variant: ForestVariant::ExtraTrees,
            n_estimators: 200,
            bootstrap: false,
            ..Self::random_forest(200)
        }
    }

    fn tree_params(&self) -> TreeParams {
        TreeParams {
            criterion: self.criterion,
            max_depth: self.max_depth,
            min_samples_split: self.min_samples_split,
            feature_subset: self.max_features,
            cut_rule: match self.variant {
                ForestVariant::RandomForest => CutRule::Best,
                ForestVariant::ExtraTrees => CutRule::Random,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
    pub params: ForestParams,
    pub seed: RngSeed,
}

/// Tree `t` draws from `seed.derive(t)`, so the ensemble does not depend on
/// how the fits are scheduled.
pub fn forest_fit(x: ArrayView2<f64>, y: &[f64], params: &ForestParams, seed: RngSeed) -> Result<ForestModel> {
    if params.n_estimators == 0 {
        return Err(Error::invalid("forest needs at least one tree"));
    }
    let n = x.nrows();
    if n < 2 {
        return Err(Error::invalid(format!("forest needs at least 2 samples, got {n}")));
    }
    let tree_params = params.tree_params();
    let trees = (0..params.n_estimators)
        .into_par_iter()
        .map(|t| {
            let mut rng = seed.derive(t as u64).rng();
            let rows = if params.bootstrap {
                Some((0..n).map(|_| rng.random_range(0..n)).collect())
            } else {
                None
            };
            tree_fit_rows(x, y, rows, &tree_params, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ForestModel { trees, params: *params, seed })
}

impl ForestModel {
    /// Mean of the trees' leaf values.
    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        self.trees[0].check_width(x)?;
        let k = self.trees.len() as f64;
        Ok(x.rows()
            .into_iter()
            .map(|r| {
                let row = r.to_vec();
                self.trees.iter().map(|t| t.predict_row(&row)).sum::<f64>() / k
            })
            .collect())
    }

    /// Majority vote of the trees' hard predictions (leaf value > 0.5);
    /// a tied vote is negative.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<u8>> {
        self.trees[0].check_width(x)?;
        let k = self.trees.len();
        Ok(x.rows()
            .into_iter()
            .map(|r| {
                let row = r.to_vec();
                let votes = self.trees.iter().filter(|t| t.predict_row(&row) > 0.5).count();
                u8::from(2 * votes > k)
            })
            .collect())
    }
}
