use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::Rng;
use crate::error::{Error, Result};

/// Smallest impurity reduction that counts as an improvement.
const MIN_DECREASE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    /// Binary targets in {0, 1}.
    Gini,
    Mse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutRule {
    /// Midpoints between consecutive distinct values.
    Best,
    /// One uniform draw inside each candidate feature's range.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSubset {
    All,
    /// ⌊√n⌋ features, at least one.
    Sqrt,
    Count(usize),
}

impl FeatureSubset {
    pub fn size(self, n_features: usize) -> usize {
        let k = match self {
            FeatureSubset::All => n_features,
            FeatureSubset::Sqrt => (n_features as f64).sqrt().floor() as usize,
            FeatureSubset::Count(k) => k,
        };
        k.clamp(1, n_features.max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeParams {
    pub criterion: Criterion,
    /// `None` grows until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub feature_subset: FeatureSubset,
    pub cut_rule: CutRule,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            criterion: Criterion::Gini,
            max_depth: None,
            min_samples_split: 2,
            feature_subset: FeatureSubset::All,
            cut_rule: CutRule::Best,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum TreeNode {
    Leaf {
        value: f64,
        samples: usize,
    },
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub root: TreeNode,
    pub criterion: Criterion,
    pub n_features: usize,
}

/// Node impurity times node size, from target sum, sum of squares and count.
pub fn weighted_impurity(criterion: Criterion, sum: f64, sum_sq: f64, n: f64) -> f64 {
    if n == 0.0 {
        return 0.0;
    }
    match criterion {
        Criterion::Gini => {
            let p = sum / n;
            n * 2.0 * p * (1.0 - p)
        }
        Criterion::Mse => (sum_sq - sum * sum / n).max(0.0),
    }
}

struct Builder<'a> {
    x: ArrayView2<'a, f64>,
    y: &'a [f64],
    params: TreeParams,
}

struct Candidate {
    score: f64,
    feature: usize,
    threshold: f64,
}

impl Builder<'_> {
    fn leaf(&self, idx: &[usize]) -> TreeNode {
        let sum: f64 = idx.iter().map(|&i| self.y[i]).sum();
        TreeNode::Leaf { value: sum / idx.len() as f64, samples: idx.len() }
    }

    fn build(&self, idx: Vec<usize>, depth: usize, rng: &mut Rng) -> TreeNode {
        let n = idx.len();
        let (sum, sum_sq) = idx.iter().fold((0.0, 0.0), |(s, q), &i| (s + self.y[i], q + self.y[i] * self.y[i]));
        let parent = weighted_impurity(self.params.criterion, sum, sum_sq, n as f64);
        let depth_left = self.params.max_depth.is_none_or(|d| depth < d);
        if !depth_left || n < self.params.min_samples_split.max(2) || parent <= MIN_DECREASE {
            return self.leaf(&idx);
        }
        let Some(best) = self.find_split(&idx, parent, rng) else {
            return self.leaf(&idx);
        };
        let (left, right): (Vec<usize>, Vec<usize>) =
            idx.iter().partition(|&&i| self.x[[i, best.feature]] <= best.threshold);
        let left = self.build(left, depth + 1, rng);
        let right = self.build(right, depth + 1, rng);
        TreeNode::Split { feature: best.feature, threshold: best.threshold, left: Box::new(left), right: Box::new(right) }
    }

    fn find_split(&self, idx: &[usize], parent: f64, rng: &mut Rng) -> Option<Candidate> {
        let d = self.x.ncols();
        let want = self.params.feature_subset.size(d);
        let mut features: Vec<usize> = (0..d).collect();
        if want < d {
            features.shuffle(rng);
        }
        let mut best: Option<Candidate> = None;
        let mut tried = 0;
        for &f in &features {
            // keep looking past the quota until something splits
            if tried >= want && best.is_some() {
                break;
            }
            let cand = match self.params.cut_rule {
                CutRule::Best => self.best_cut(idx, f),
                CutRule::Random => self.random_cut(idx, f, rng),
            };
            let Some(cand) = cand else { continue };
            tried += 1;
            if parent - cand.score > MIN_DECREASE && best.as_ref().is_none_or(|b| cand.score < b.score) {
                best = Some(cand);
            }
        }
        best
    }

    /// Lowest child impurity over midpoints of feature `f`; `None` if constant.
    fn best_cut(&self, idx: &[usize], f: usize) -> Option<Candidate> {
        let mut order: Vec<(f64, f64)> = idx.iter().map(|&i| (self.x[[i, f]], self.y[i])).collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0));
        if order[0].0 == order[order.len() - 1].0 {
            return None;
        }
        let n = order.len() as f64;
        let (tot, tot_sq) = order.iter().fold((0.0, 0.0), |(s, q), &(_, y)| (s + y, q + y * y));
        let (mut s, mut q) = (0.0, 0.0);
        let mut best: Option<Candidate> = None;
        for j in 0..order.len() - 1 {
            let (v, y) = order[j];
            s += y;
            q += y * y;
            let next = order[j + 1].0;
            if v == next {
                continue;
            }
            let nl = (j + 1) as f64;
            let score = weighted_impurity(self.params.criterion, s, q, nl)
                + weighted_impurity(self.params.criterion, tot - s, tot_sq - q, n - nl);
            if best.as_ref().is_none_or(|b| score < b.score) {
                let mid = v + (next - v) / 2.0;
                let threshold = if mid < next { mid } else { v };
                best = Some(Candidate { score, feature: f, threshold });
            }
        }
        best
    }

    fn random_cut(&self, idx: &[usize], f: usize, rng: &mut Rng) -> Option<Candidate> {
        let (lo, hi) = idx.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
            let v = self.x[[i, f]];
            (lo.min(v), hi.max(v))
        });
        if lo >= hi {
            return None;
        }
        let mut threshold = rng.random_range(lo..hi);
        if threshold >= hi {
            threshold = lo;
        }
        let (mut ls, mut lq, mut ln, mut rs, mut rq, mut rn) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        for &i in idx {
            let y = self.y[i];
            if self.x[[i, f]] <= threshold {
                ls += y;
                lq += y * y;
                ln += 1.0;
            } else {
                rs += y;
                rq += y * y;
                rn += 1.0;
            }
        }
        let score = weighted_impurity(self.params.criterion, ls, lq, ln)
            + weighted_impurity(self.params.criterion, rs, rq, rn);
        Some(Candidate { score, feature: f, threshold })
    }
}

/// Greedy top-down tree on the rows `rows` of `x` (all rows when `None`).
/// Leaves hold the mean target, which for 0/1 targets is the positive fraction.
pub fn tree_fit_rows(
    x: ArrayView2<f64>,
    y: &[f64],
    rows: Option<Vec<usize>>,
    params: &TreeParams,
    rng: &mut Rng,
) -> Result<Tree> {
    if x.nrows() != y.len() {
        return Err(Error::shape(format!("{} feature rows but {} targets", x.nrows(), y.len())));
    }
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(Error::invalid("tree needs at least one sample and one feature"));
    }
    if params.max_depth == Some(0) {
        return Err(Error::invalid("max_depth must be at least 1"));
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("target {i} is not finite")));
    }
    if params.criterion == Criterion::Gini && y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::invalid("gini criterion needs 0/1 targets"));
    }
    let rows = rows.unwrap_or_else(|| (0..x.nrows()).collect());
    if rows.is_empty() {
        return Err(Error::invalid("tree needs at least one sample"));
    }
    let builder = Builder { x, y, params: *params };
    let root = builder.build(rows, 0, rng);
    Ok(Tree { root, criterion: params.criterion, n_features: x.ncols() })
}

pub fn tree_fit(x: ArrayView2<f64>, y: &[f64], params: &TreeParams, rng: &mut Rng) -> Result<Tree> {
    tree_fit_rows(x, y, None, params, rng)
}

impl Tree {
    fn leaf_of(&self, row: &[f64]) -> (&TreeNode, usize) {
        // leaf ids are assigned in depth-first, left-first order
        let mut node = &self.root;
        let mut id = 0;
        loop {
            match node {
                TreeNode::Leaf { .. } => return (node, id),
                TreeNode::Split { feature, threshold, left, right } => {
                    if row[*feature] <= *threshold {
                        node = left;
                    } else {
                        id += count_leaves(left);
                        node = right;
                    }
                }
            }
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        match self.leaf_of(row).0 {
            TreeNode::Leaf { value, .. } => *value,
            TreeNode::Split { .. } => unreachable!(),
        }
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        self.check_width(x)?;
        Ok(x.rows().into_iter().map(|r| self.predict_row(&r.to_vec())).collect())
    }

    pub fn check_width(&self, x: ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.n_features {
            return Err(Error::shape(format!("tree expects {} features, got {}", self.n_features, x.ncols())));
        }
        Ok(())
    }

    pub fn leaf_count(&self) -> usize {
        count_leaves(&self.root)
    }

    /// Index of the leaf `row` falls into, in depth-first order.
    pub fn leaf_index(&self, row: &[f64]) -> usize {
        self.leaf_of(row).1
    }

    pub fn depth(&self) -> usize {
        fn go(n: &TreeNode) -> usize {
            match n {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + go(left).max(go(right)),
            }
        }
        go(&self.root)
    }

    /// Overwrites leaf values in depth-first order.
    pub fn set_leaf_values(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.leaf_count() {
            return Err(Error::shape(format!("{} leaf values for {} leaves", values.len(), self.leaf_count())));
        }
        fn go(n: &mut TreeNode, values: &[f64], next: &mut usize) {
            match n {
                TreeNode::Leaf { value, .. } => {
                    *value = values[*next];
                    *next += 1;
                }
                TreeNode::Split { left, right, .. } => {
                    go(left, values, next);
                    go(right, values, next);
                }
            }
        }
        go(&mut self.root, values, &mut 0);
        Ok(())
    }
}

fn count_leaves(n: &TreeNode) -> usize {
    match n {
        TreeNode::Leaf { .. } => 1,
        TreeNode::Split { left, right, .. } => count_leaves(left) + count_leaves(right),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::RngSeed;
    use ndarray::{array, Array2};

    #[test]
    fn pure_node_is_leaf() {
        let x = array![[1.0], [2.0], [3.0]];
        let t = tree_fit(x.view(), &[1.0, 1.0, 1.0], &TreeParams::default(), &mut RngSeed(0).rng()).unwrap();
        assert_eq!(t.root, TreeNode::Leaf { value: 1.0, samples: 3 });
    }

    #[test]
    fn recovers_one_dimensional_cut() {
        let x = Array2::from_shape_fn((10, 1), |(i, _)| i as f64);
        let y: Vec<f64> = (0..10).map(|i| f64::from(u8::from(i >= 6))).collect();
        let t = tree_fit(x.view(), &y, &TreeParams::default(), &mut RngSeed(0).rng()).unwrap();
        match t.root {
            TreeNode::Split { feature: 0, threshold, .. } => assert_eq!(threshold, 5.5),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(t.depth(), 1);
    }

    #[test]
    fn constant_features_give_leaf() {
        let x = Array2::from_elem((4, 2), 3.0);
        let t = tree_fit(x.view(), &[0.0, 1.0, 0.0, 1.0], &TreeParams::default(), &mut RngSeed(0).rng()).unwrap();
        assert_eq!(t.root, TreeNode::Leaf { value: 0.5, samples: 4 });
    }

    #[test]
    fn random_rule_reproducible() {
        let x = Array2::from_shape_fn((40, 3), |(i, j)| ((i * 7 + j * 13) % 17) as f64);
        let y: Vec<f64> = (0..40).map(|i| f64::from(u8::from(i % 3 == 0))).collect();
        let params = TreeParams { cut_rule: CutRule::Random, ..TreeParams::default() };
        let a = tree_fit(x.view(), &y, &params, &mut RngSeed(4).rng()).unwrap();
        let b = tree_fit(x.view(), &y, &params, &mut RngSeed(4).rng()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn leaf_values_can_be_rewritten() {
        let x = Array2::from_shape_fn((8, 1), |(i, _)| i as f64);
        let y: Vec<f64> = (0..8).map(|i| (i / 2) as f64).collect();
        let params = TreeParams { criterion: Criterion::Mse, max_depth: Some(2), ..TreeParams::default() };
        let mut t = tree_fit(x.view(), &y, &params, &mut RngSeed(0).rng()).unwrap();
        assert_eq!(t.leaf_count(), 4);
        t.set_leaf_values(&[10.0, 11.0, 12.0, 13.0]).unwrap();
        assert_eq!(t.predict_row(&[7.0]), 13.0);
        assert_eq!(t.leaf_index(&[0.0]), 0);
    }
}
