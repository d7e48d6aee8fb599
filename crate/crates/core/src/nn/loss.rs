use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::Activation;
use crate::error::{Error, Result};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before taking logs.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    Bce,
    SoftmaxCe,
    /// Categorical CE over the first `weather_count` columns plus BCE over the rest.
    Hybrid { weather_count: usize },
}

impl LossKind {
    /// Output activation the loss is fused with.
    pub fn head(self) -> Activation {
        match self {
            LossKind::Bce => Activation::Sigmoid,
            LossKind::SoftmaxCe => Activation::Softmax,
            LossKind::Hybrid { weather_count } => Activation::Hybrid { softmax_width: weather_count },
        }
    }

    pub(crate) fn validate(self, width: usize) -> Result<()> {
        if let LossKind::Hybrid { weather_count } = self {
            if weather_count == 0 {
                return Err(Error::invalid("hybrid loss needs a non-empty weather block"));
            }
            if weather_count > width {
                return Err(Error::invalid(format!(
                    "weather block of {weather_count} exceeds {width} outputs"
                )));
            }
        }
        Ok(())
    }
}

fn clamp(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

fn bce_sum(pred: ArrayView2<f64>, truth: ArrayView2<f64>) -> f64 {
    pred.iter()
        .zip(truth.iter())
        .map(|(&p, &y)| {
            let p = clamp(p);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum()
}

fn ce_sum(pred: ArrayView2<f64>, truth: ArrayView2<f64>) -> f64 {
    pred.iter()
        .zip(truth.iter())
        .map(|(&p, &y)| if y == 0.0 { 0.0 } else { -y * clamp(p).ln() })
        .sum()
}

fn check(pred: ArrayView2<f64>, truth: ArrayView2<f64>, kind: LossKind) -> Result<()> {
    if pred.dim() != truth.dim() {
        return Err(Error::shape(format!(
            "prediction shape {:?} differs from truth shape {:?}",
            pred.dim(),
            truth.dim()
        )));
    }
    if pred.nrows() == 0 {
        return Err(Error::invalid("loss over an empty batch"));
    }
    kind.validate(pred.ncols())
}

/// Mean loss of probability predictions against 0/1 truth.
///
/// `Bce` averages over every cell, `SoftmaxCe` over rows, and `Hybrid` adds
/// the row-averaged weather CE to the cell-averaged BCE of the remaining
/// columns.
pub fn loss(pred: ArrayView2<f64>, truth: ArrayView2<f64>, kind: LossKind) -> Result<f64> {
    check(pred, truth, kind)?;
    let n = pred.nrows() as f64;
    Ok(match kind {
        LossKind::Bce => bce_sum(pred, truth) / pred.len() as f64,
        LossKind::SoftmaxCe => ce_sum(pred, truth) / n,
        LossKind::Hybrid { weather_count: w } => {
            let ce = ce_sum(pred.slice(s![.., ..w]), truth.slice(s![.., ..w])) / n;
            let ground = pred.ncols() - w;
            let bce = if ground == 0 {
                0.0
            } else {
                bce_sum(pred.slice(s![.., w..]), truth.slice(s![.., w..])) / (n * ground as f64)
            };
            ce + bce
        }
    })
}

/// Gradient of [`loss`] with respect to the pre-activation of its fused head.
pub fn output_gradient(pred: ArrayView2<f64>, truth: ArrayView2<f64>, kind: LossKind) -> Result<Array2<f64>> {
    check(pred, truth, kind)?;
    let n = pred.nrows() as f64;
    let sigmoid_grad = |p: ArrayView2<f64>, y: ArrayView2<f64>, denom: f64| (&p - &y) / denom;
    let softmax_grad = |p: ArrayView2<f64>, y: ArrayView2<f64>| {
        let mut g = Array2::zeros(p.raw_dim());
        for i in 0..p.nrows() {
            let mass: f64 = y.row(i).sum();
            for j in 0..p.ncols() {
                g[[i, j]] = (p[[i, j]] * mass - y[[i, j]]) / n;
            }
        }
        g
    };
    Ok(match kind {
        LossKind::Bce => sigmoid_grad(pred, truth, pred.len() as f64),
        LossKind::SoftmaxCe => softmax_grad(pred, truth),
        LossKind::Hybrid { weather_count: w } => {
            let mut g = Array2::zeros(pred.raw_dim());
            g.slice_mut(s![.., ..w])
                .assign(&softmax_grad(pred.slice(s![.., ..w]), truth.slice(s![.., ..w])));
            let ground = pred.ncols() - w;
            if ground > 0 {
                g.slice_mut(s![.., w..]).assign(&sigmoid_grad(
                    pred.slice(s![.., w..]),
                    truth.slice(s![.., w..]),
                    n * ground as f64,
                ));
            }
            g
        }
    })
}
