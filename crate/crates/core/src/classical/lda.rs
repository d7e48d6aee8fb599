use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::sigmoid;

/// Ridge added to the within-class scatter before inversion.
pub const DEFAULT_LAMBDA: f64 = 1e-6;

/// Fisher discriminant with `k` components and nearest-projected-mean
/// classification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaModel {
    pub classes: Vec<usize>,
    pub scatter_within: Array2<f64>,
    pub scatter_between: Array2<f64>,
    /// d × k; projected within-class variance is 1 along every column.
    pub projection: Array2<f64>,
    pub eigenvalues: Vec<f64>,
    /// c × k projected class means.
    pub class_means: Array2<f64>,
    pub lambda: f64,
}

fn to_na(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

/// `k = None` keeps the maximum min(classes − 1, features) components.
pub fn lda_fit(x: ArrayView2<f64>, labels: &[usize], k: Option<usize>, lambda: f64) -> Result<LdaModel> {
    let (n, d) = x.dim();
    if labels.len() != n {
        return Err(Error::shape(format!("{n} feature rows but {} labels", labels.len())));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("ridge term must be non-negative, got {lambda}")));
    }
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let c = classes.len();
    if c < 2 {
        return Err(Error::invalid("discriminant analysis needs at least two classes"));
    }
    let max_k = (c - 1).min(d);
    let k = k.unwrap_or(max_k);
    if k == 0 || k > max_k {
        return Err(Error::invalid(format!(
            "{k} components requested; at most min(classes - 1, features) = {max_k}"
        )));
    }

    let mut means = Array2::<f64>::zeros((c, d));
    let mut counts = vec![0usize; c];
    for (row, &l) in x.rows().into_iter().zip(labels) {
        let ci = classes.binary_search(&l).expect("label collected above");
        counts[ci] += 1;
        let mut m = means.row_mut(ci);
        m += &row;
    }
    if let Some(ci) = counts.iter().position(|&cnt| cnt < 2) {
        return Err(Error::invalid(format!("class {} has fewer than 2 samples", classes[ci])));
    }
    for (ci, &cnt) in counts.iter().enumerate() {
        let mut m = means.row_mut(ci);
        m /= cnt as f64;
    }
    let overall: Array1<f64> = x.sum_axis(ndarray::Axis(0)) / n as f64;

    let mut sw = Array2::<f64>::zeros((d, d));
    for (row, &l) in x.rows().into_iter().zip(labels) {
        let ci = classes.binary_search(&l).expect("label collected above");
        let diff = &row - &means.row(ci);
        for a in 0..d {
            for b in 0..d {
                sw[[a, b]] += diff[a] * diff[b];
            }
        }
    }
    let mut sb = Array2::<f64>::zeros((d, d));
    for ci in 0..c {
        let diff = &means.row(ci) - &overall;
        for a in 0..d {
            for b in 0..d {
                sb[[a, b]] += counts[ci] as f64 * diff[a] * diff[b];
            }
        }
    }

    let a = to_na(&sw) + DMatrix::identity(d, d) * lambda;
    let chol = a.clone().cholesky().ok_or_else(|| {
        Error::Numerical("within-class scatter is singular; use a positive ridge term".into())
    })?;
    let l = chol.l();
    let diag_max = (0..d).map(|i| l[(i, i)]).fold(0.0f64, f64::max);
    let diag_min = (0..d).map(|i| l[(i, i)]).fold(f64::INFINITY, f64::min);
    if diag_min <= diag_max * 1e-7 {
        return Err(Error::Numerical("within-class scatter is singular; use a positive ridge term".into()));
    }
    // symmetric form of A⁻¹S_b: L⁻¹ S_b L⁻ᵀ shares its eigenvalues
    let l_inv = l.clone().solve_lower_triangular(&DMatrix::identity(d, d)).expect("non-zero diagonal");
    let m = &l_inv * to_na(&sb) * l_inv.transpose();
    let m = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));

    let lt = l.transpose();
    let dof = (n - c) as f64;
    let mut projection = Array2::<f64>::zeros((d, k));
    let mut eigenvalues = Vec::with_capacity(k);
    for (col, &idx) in order.iter().take(k).enumerate() {
        let u: DVector<f64> = eig.eigenvectors.column(idx).into_owned();
        let mut w = lt.solve_upper_triangular(&u).expect("non-zero diagonal");
        let var = (w.transpose() * to_na(&sw) * &w)[(0, 0)] / dof;
        if var > 0.0 {
            w /= var.sqrt();
        }
        let pivot = w.iter().copied().fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        if pivot < 0.0 {
            w = -w;
        }
        for r in 0..d {
            projection[[r, col]] = w[r];
        }
        eigenvalues.push(eig.eigenvalues[idx].max(0.0));
    }
    let class_means = means.dot(&projection);
    Ok(LdaModel {
        classes,
        scatter_within: sw,
        scatter_between: sb,
        projection,
        eigenvalues,
        class_means,
        lambda,
    })
}

impl LdaModel {
    pub fn n_features(&self) -> usize {
        self.projection.nrows()
    }

    pub fn transform(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.n_features() {
            return Err(Error::shape(format!("model expects {} features, got {}", self.n_features(), x.ncols())));
        }
        Ok(x.dot(&self.projection))
    }

    /// Squared projected distance from every row to every class mean.
    fn sq_distances(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let z = self.transform(x)?;
        let c = self.classes.len();
        Ok(Array2::from_shape_fn((z.nrows(), c), |(i, ci)| {
            z.row(i).iter().zip(self.class_means.row(ci)).map(|(a, b)| (a - b) * (a - b)).sum()
        }))
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<usize>> {
        let d2 = self.sq_distances(x)?;
        Ok(d2
            .rows()
            .into_iter()
            .map(|r| {
                let best = (0..r.len()).min_by(|&a, &b| r[a].total_cmp(&r[b])).expect("at least two classes");
                self.classes[best]
            })
            .collect())
    }

    /// Probability of the second (larger) class for a binary model:
    /// σ((d₀² − d₁²)/2), the equal-prior Gaussian posterior in projected space.
    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        if self.classes.len() != 2 {
            return Err(Error::invalid("probabilities are defined for binary models only"));
        }
        let d2 = self.sq_distances(x)?;
        Ok(d2.rows().into_iter().map(|r| sigmoid((r[0] - r[1]) / 2.0)).collect())
    }
}
