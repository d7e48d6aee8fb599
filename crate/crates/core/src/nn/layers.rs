use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::Activation;
use crate::data::Rng;
use crate::error::{Error, Result};

pub const BN_DEFAULT_EPSILON: f64 = 1e-3;
pub const BN_DEFAULT_MOMENTUM: f64 = 0.99;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// out × in
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(w: Array2<f64>, b: Array1<f64>, activation: Activation) -> Result<Self> {
        if w.nrows() != b.len() {
            return Err(Error::shape(format!(
                "weight matrix has {} rows but bias has {} entries",
                w.nrows(),
                b.len()
            )));
        }
        if let Activation::Hybrid { softmax_width } = activation {
            if softmax_width == 0 || softmax_width > w.nrows() {
                return Err(Error::invalid(format!(
                    "hybrid softmax width {softmax_width} invalid for {} outputs",
                    w.nrows()
                )));
            }
        }
        if w.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite dense parameters".into()));
        }
        Ok(DenseLayer { w, b, activation })
    }

    /// He-uniform for relu layers, Glorot-uniform otherwise; zero bias.
    pub fn init(inputs: usize, outputs: usize, activation: Activation, rng: &mut Rng) -> Result<Self> {
        if inputs == 0 || outputs == 0 {
            return Err(Error::invalid("dense layer dimensions must be positive"));
        }
        let limit = match activation {
            Activation::Relu => (6.0 / inputs as f64).sqrt(),
            _ => (6.0 / (inputs + outputs) as f64).sqrt(),
        };
        let w = Array2::from_shape_simple_fn((outputs, inputs), || rng.random_range(-limit..limit));
        DenseLayer::new(w, Array1::zeros(outputs), activation)
    }

    pub fn inputs(&self) -> usize {
        self.w.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.w.nrows()
    }

    pub fn pre_activation(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.w.t()) + &self.b
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNormLayer {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub epsilon: f64,
    pub momentum: f64,
}

/// Batch statistics from a train-mode pass, needed for backward and for the
/// running-average update.
#[derive(Debug, Clone)]
pub struct BnCache {
    pub x_hat: Array2<f64>,
    pub inv_std: Array1<f64>,
    pub mean: Array1<f64>,
    pub var: Array1<f64>,
}

impl BatchNormLayer {
    pub fn new(features: usize, epsilon: f64, momentum: f64) -> Result<Self> {
        if features == 0 {
            return Err(Error::invalid("batch norm needs at least one feature"));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::invalid(format!("batch norm epsilon must be positive, got {epsilon}")));
        }
        if !(momentum > 0.0 && momentum < 1.0) {
            return Err(Error::invalid(format!("batch norm momentum must lie in (0, 1), got {momentum}")));
        }
        Ok(BatchNormLayer {
            gamma: Array1::ones(features),
            beta: Array1::zeros(features),
            running_mean: Array1::zeros(features),
            running_var: Array1::ones(features),
            epsilon,
            momentum,
        })
    }

    pub fn features(&self) -> usize {
        self.gamma.len()
    }

    pub(crate) fn forward_train(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, BnCache)> {
        let m = x.nrows();
        if m < 2 {
            return Err(Error::invalid("batch norm in train mode needs a batch of at least 2"));
        }
        let mean = x.mean_axis(Axis(0)).expect("non-empty batch");
        let centered = &x - &mean;
        let var = centered.mapv(|v| v * v).mean_axis(Axis(0)).expect("non-empty batch");
        let inv_std = var.mapv(|v| 1.0 / (v + self.epsilon).sqrt());
        let x_hat = &centered * &inv_std;
        let y = &x_hat * &self.gamma + &self.beta;
        Ok((y, BnCache { x_hat, inv_std, mean, var }))
    }

    pub(crate) fn forward_infer(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let inv_std = self.running_var.mapv(|v| 1.0 / (v + self.epsilon).sqrt());
        (&x - &self.running_mean) * &inv_std * &self.gamma + &self.beta
    }

    /// Returns (dx, dgamma, dbeta).
    pub(crate) fn backward(&self, cache: &BnCache, dy: ArrayView2<f64>) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
        let m = dy.nrows() as f64;
        let dbeta = dy.sum_axis(Axis(0));
        let dgamma = (&dy * &cache.x_hat).sum_axis(Axis(0));
        let dx_hat = &dy * &self.gamma;
        let sum_dx_hat = dx_hat.sum_axis(Axis(0));
        let sum_dx_hat_xhat = (&dx_hat * &cache.x_hat).sum_axis(Axis(0));
        let dx = (dx_hat * m - &sum_dx_hat - &cache.x_hat * &sum_dx_hat_xhat) * &cache.inv_std / m;
        (dx, dgamma, dbeta)
    }

    /// Exponential running average with biased batch variance.
    pub(crate) fn update_running(&mut self, cache: &BnCache) {
        let mo = self.momentum;
        self.running_mean = &self.running_mean * mo + &cache.mean * (1.0 - mo);
        self.running_var = &self.running_var * mo + &cache.var * (1.0 - mo);
    }
}

/// Batch normalization of `x`. Train mode uses batch statistics and folds them
/// into the running averages; infer mode uses the running averages and leaves
/// the layer untouched.
pub fn bn_forward(x: ArrayView2<f64>, layer: &mut BatchNormLayer, mode: super::Mode) -> Result<Array2<f64>> {
    if x.ncols() != layer.features() {
        return Err(Error::shape(format!(
            "batch norm expects {} features, got {}",
            layer.features(),
            x.ncols()
        )));
    }
    match mode {
        super::Mode::Train => {
            let (y, cache) = layer.forward_train(x)?;
            layer.update_running(&cache);
            Ok(y)
        }
        super::Mode::Infer => Ok(layer.forward_infer(x)),
    }
}
