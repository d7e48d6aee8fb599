//! Dense feed-forward networks trained with Adam or AMSGrad.

mod checkpoint;
mod layers;
mod loss;
mod network;
mod optim;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use layers::{bn_forward, BatchNormLayer, DenseLayer, BN_DEFAULT_EPSILON, BN_DEFAULT_MOMENTUM};
pub use loss::{loss, output_gradient, LossKind, PROB_CLAMP};
pub use network::{ForwardPass, HiddenSpec, Layer, Mode, NetSpec, Network};
pub use optim::{adam_step, amsgrad_step, OptimizerConfig, OptimizerKind, OptimizerState};
pub use train::{
    predict, train, EarlyStopping, EpochRecord, History, Monitor, TrainConfig, TrainedModel,
};

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-subtracted softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|&v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Softmax,
    /// Softmax over the first `softmax_width` outputs, sigmoid over the rest.
    Hybrid { softmax_width: usize },
}

impl Activation {
    pub fn is_terminal_only(self) -> bool {
        matches!(self, Activation::Softmax | Activation::Hybrid { .. })
    }

    pub fn apply(self, z: ArrayView2<f64>) -> Array2<f64> {
        match self {
            Activation::Identity => z.to_owned(),
            Activation::Relu => z.mapv(|v| v.max(0.0)),
            Activation::Sigmoid => z.mapv(sigmoid),
            Activation::Softmax => softmax_rows(z, 0, z.ncols()),
            Activation::Hybrid { softmax_width } => {
                let mut out = z.mapv(sigmoid);
                let block = softmax_rows(z, 0, softmax_width);
                out.slice_mut(ndarray::s![.., ..softmax_width]).assign(&block);
                out
            }
        }
    }

    /// Chain rule through the activation for elementwise activations.
    /// `a` is the activation output and `z` its input.
    pub(crate) fn backward(self, z: ArrayView2<f64>, a: ArrayView2<f64>, grad_a: ArrayView2<f64>) -> Array2<f64> {
        match self {
            Activation::Identity => grad_a.to_owned(),
            Activation::Relu => {
                let mut g = grad_a.to_owned();
                g.zip_mut_with(&z, |g, &z| {
                    if z <= 0.0 {
                        *g = 0.0
                    }
                });
                g
            }
            Activation::Sigmoid => {
                let mut g = grad_a.to_owned();
                g.zip_mut_with(&a, |g, &a| *g *= a * (1.0 - a));
                g
            }
            Activation::Softmax => softmax_backward(a, grad_a, 0, a.ncols()),
            Activation::Hybrid { softmax_width } => {
                let mut g = grad_a.to_owned();
                g.zip_mut_with(&a, |g, &a| *g *= a * (1.0 - a));
                let block = softmax_backward(a, grad_a, 0, softmax_width);
                g.slice_mut(ndarray::s![.., ..softmax_width]).assign(&block);
                g
            }
        }
    }
}

fn softmax_rows(z: ArrayView2<f64>, start: usize, end: usize) -> Array2<f64> {
    let block = z.slice(ndarray::s![.., start..end]);
    let mut out = Array2::zeros(block.raw_dim());
    for (src, mut dst) in block.axis_iter(Axis(0)).zip(out.axis_iter_mut(Axis(0))) {
        let row: Vec<f64> = src.to_vec();
        for (d, v) in dst.iter_mut().zip(softmax(&row)) {
            *d = v;
        }
    }
    out
}

fn softmax_backward(a: ArrayView2<f64>, grad_a: ArrayView2<f64>, start: usize, end: usize) -> Array2<f64> {
    let a = a.slice(ndarray::s![.., start..end]);
    let g = grad_a.slice(ndarray::s![.., start..end]);
    let mut out = Array2::zeros(a.raw_dim());
    for i in 0..a.nrows() {
        let dot: f64 = (0..a.ncols()).map(|j| a[[i, j]] * g[[i, j]]).sum();
        for j in 0..a.ncols() {
            out[[i, j]] = a[[i, j]] * (g[[i, j]] - dot);
        }
    }
    out
}
