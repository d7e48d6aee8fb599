//! Stratified k-fold assignment for multi-label data.
//!
//! Uses iterative stratification: the label with the fewest remaining
//! positives is handled first, and each of its samples goes to the fold that
//! still wants the most positives of that label. Ties fall back to the fold
//! with the most remaining capacity, then to a seeded draw.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{LabelMatrix, RngSeed};
use crate::error::{Error, Result};

/// Fold index in `[0, k)` for every sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    fold_of: Vec<usize>,
    k: usize,
}

impl FoldAssignment {
    pub fn new(fold_of: Vec<usize>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("fold count must be positive"));
        }
        let mut sizes = vec![0usize; k];
        for &f in &fold_of {
            if f >= k {
                return Err(Error::invalid(format!("fold index {f} out of range for k = {k}")));
            }
            sizes[f] += 1;
        }
        if let Some(f) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::invalid(format!("fold {f} is empty")));
        }
        Ok(FoldAssignment { fold_of, k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_samples(&self) -> usize {
        self.fold_of.len()
    }

    pub fn fold_of(&self) -> &[usize] {
        &self.fold_of
    }

    /// Sample indices in fold `fold`, ascending.
    pub fn holdout(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] == fold).collect()
    }

    /// Sample indices outside fold `fold`, ascending.
    pub fn training(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] != fold).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.fold_of {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Picks the fold with the highest `demand`, breaking ties by capacity and
/// then uniformly at random.
fn pick_fold(demand: &[f64], capacity: &[f64], rng: &mut crate::data::Rng) -> usize {
    let best_demand = demand.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tied: Vec<usize> = (0..demand.len()).filter(|&f| demand[f] == best_demand).collect();
    let best_cap = tied.iter().map(|&f| capacity[f]).fold(f64::NEG_INFINITY, f64::max);
    let tied: Vec<usize> = tied.into_iter().filter(|&f| capacity[f] == best_cap).collect();
    if tied.len() == 1 {
        tied[0]
    } else {
        tied[rng.random_range(0..tied.len())]
    }
}

pub fn stratified_kfold(truth: &LabelMatrix, k: usize, seed: RngSeed) -> Result<FoldAssignment> {
    let n = truth.n_samples();
    let n_labels = truth.n_labels();
    if k < 2 {
        return Err(Error::invalid(format!("need at least 2 folds, got {k}")));
    }
    if k > n {
        return Err(Error::invalid(format!("{k} folds requested for {n} samples")));
    }
    let mut rng = seed.rng();
    let share = 1.0 / k as f64;
    let mut capacity = vec![n as f64 * share; k];
    let positives = truth.positives_per_label();
    // demand[l][f]: positives of label l fold f still wants
    let mut demand: Vec<Vec<f64>> = positives
        .iter()
        .map(|&p| vec![p as f64 * share; k])
        .collect();
    let mut remaining = positives.clone();

    // seeded processing order keeps sample index from biasing the draw
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);

    let mut fold_of = vec![usize::MAX; n];
    let mut unassigned = n;
    loop {
        let label = (0..n_labels)
            .filter(|&l| remaining[l] > 0)
            .min_by_key(|&l| (remaining[l], l));
        let Some(label) = label else { break };
        for &i in &order {
            if fold_of[i] != usize::MAX || !truth.get(i, label) {
                continue;
            }
            let f = pick_fold(&demand[label], &capacity, &mut rng);
            fold_of[i] = f;
            unassigned -= 1;
            capacity[f] -= 1.0;
            for l in 0..n_labels {
                if truth.get(i, l) {
                    demand[l][f] -= 1.0;
                    remaining[l] -= 1;
                }
            }
        }
    }

    // samples without any positive label fill the remaining capacity
    if unassigned > 0 {
        for &i in &order {
            if fold_of[i] == usize::MAX {
                let f = pick_fold(&capacity, &capacity, &mut rng);
                fold_of[i] = f;
                capacity[f] -= 1.0;
            }
        }
    }

    // heavily skewed label sets can starve a fold; move one sample from the
    // largest fold into each empty one
    let mut sizes = vec![0usize; k];
    for &f in &fold_of {
        sizes[f] += 1;
    }
    while let Some(empty) = sizes.iter().position(|&s| s == 0) {
        let largest = (0..k).max_by_key(|&f| (sizes[f], std::cmp::Reverse(f))).unwrap_or(0);
        let donor = order
            .iter()
            .rev()
            .copied()
            .find(|&i| fold_of[i] == largest)
            .expect("largest fold is non-empty");
        fold_of[donor] = empty;
        sizes[largest] -= 1;
        sizes[empty] += 1;
    }

    FoldAssignment::new(fold_of, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LabelVocabulary;
    use ndarray::Array2;
    use std::sync::Arc;

    fn single_label(n: usize, positives: usize) -> LabelMatrix {
        let vocab = Arc::new(LabelVocabulary::new(vec!["a"], 0).unwrap());
        let values = Array2::from_shape_fn((n, 1), |(i, _)| u8::from(i % (n / positives) == 0));
        LabelMatrix::new(values, vocab).unwrap()
    }

    #[test]
    fn exact_balance_for_one_label() {
        let truth = single_label(100, 20);
        assert_eq!(truth.positives_per_label(), [20]);
        let folds = stratified_kfold(&truth, 5, RngSeed(3)).unwrap();
        for f in 0..5 {
            let rows = folds.holdout(f);
            assert_eq!(rows.len(), 20);
            let pos = rows.iter().filter(|&&i| truth.get(i, 0)).count();
            assert_eq!(pos, 4);
        }
    }

    #[test]
    fn all_positive_label_balances_sizes() {
        let vocab = Arc::new(LabelVocabulary::new(vec!["a"], 0).unwrap());
        let truth = LabelMatrix::new(Array2::ones((23, 1)), vocab).unwrap();
        let folds = stratified_kfold(&truth, 4, RngSeed(1)).unwrap();
        let sizes = folds.sizes();
        let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
        assert!(hi - lo <= 1, "{sizes:?}");
    }

    #[test]
    fn deterministic_under_seed() {
        let truth = single_label(60, 10);
        let a = stratified_kfold(&truth, 3, RngSeed(9)).unwrap();
        let b = stratified_kfold(&truth, 3, RngSeed(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_fold_counts() {
        let truth = single_label(10, 5);
        assert!(stratified_kfold(&truth, 1, RngSeed(0)).is_err());
        assert!(stratified_kfold(&truth, 11, RngSeed(0)).is_err());
        assert!(stratified_kfold(&truth, 10, RngSeed(0)).is_ok());
    }

    #[test]
    fn holdout_and_training_partition() {
        let folds = FoldAssignment::new(vec![0, 1, 2, 1, 0], 3).unwrap();
        assert_eq!(folds.holdout(1), [1, 3]);
        assert_eq!(folds.training(1), [0, 2, 4]);
        assert!(FoldAssignment::new(vec![0, 0], 2).is_err());
    }
}
