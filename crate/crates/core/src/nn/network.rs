use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::layers::BnCache;
use super::{Activation, BatchNormLayer, DenseLayer, LossKind, BN_DEFAULT_EPSILON, BN_DEFAULT_MOMENTUM};
use crate::data::Rng;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Layer {
    Dense(DenseLayer),
    BatchNorm(BatchNormLayer),
    /// Inverted dropout: kept units are scaled by 1/(1 - rate) during training.
    Dropout { rate: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenSpec {
    pub units: usize,
    pub activation: Activation,
    pub batch_norm: bool,
    pub dropout: f64,
}

impl HiddenSpec {
    pub fn relu(units: usize) -> Self {
        HiddenSpec { units, activation: Activation::Relu, batch_norm: false, dropout: 0.0 }
    }
}

/// Layout of a network: hidden blocks of Dense → [BatchNorm] → [Dropout],
/// then a dense output layer with activation `head`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub input_dim: usize,
    pub hidden: Vec<HiddenSpec>,
    pub output_dim: usize,
    pub head: Activation,
    pub bn_epsilon: f64,
    pub bn_momentum: f64,
}

impl NetSpec {
    pub fn new(input_dim: usize, hidden: Vec<HiddenSpec>, output_dim: usize, head: Activation) -> Self {
        NetSpec {
            input_dim,
            hidden,
            output_dim,
            head,
            bn_epsilon: BN_DEFAULT_EPSILON,
            bn_momentum: BN_DEFAULT_MOMENTUM,
        }
    }

    /// Head fused with `loss`.
    pub fn for_loss(input_dim: usize, hidden: Vec<HiddenSpec>, output_dim: usize, loss: LossKind) -> Self {
        Self::new(input_dim, hidden, output_dim, loss.head())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    layers: Vec<Layer>,
}

#[derive(Debug, Clone)]
enum Cache {
    Dense { input: Array2<f64>, z: Array2<f64> },
    BatchNorm { cache: BnCache, train: bool },
    Dropout { mask: Option<Array2<f64>> },
}

/// Activations recorded by [`Network::forward`]. Holds everything the
/// backward pass and the running-statistics update need.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    caches: Vec<Cache>,
    output: Array2<f64>,
}

impl ForwardPass {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }

    pub fn into_output(self) -> Array2<f64> {
        self.output
    }
}

impl Network {
    pub fn new(spec: &NetSpec, rng: &mut Rng) -> Result<Self> {
        let mut layers = Vec::new();
        let mut width = spec.input_dim;
        for h in &spec.hidden {
            layers.push(Layer::Dense(DenseLayer::init(width, h.units, h.activation, rng)?));
            if h.batch_norm {
                layers.push(Layer::BatchNorm(BatchNormLayer::new(h.units, spec.bn_epsilon, spec.bn_momentum)?));
            }
            if h.dropout > 0.0 {
                layers.push(Layer::Dropout { rate: h.dropout });
            }
            width = h.units;
        }
        layers.push(Layer::Dense(DenseLayer::init(width, spec.output_dim, spec.head, rng)?));
        Network::from_layers(layers)
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        let Some(Layer::Dense(_)) = layers.last() else {
            return Err(Error::invalid("network must end with a dense layer"));
        };
        let mut width: Option<usize> = None;
        let n = layers.len();
        for (i, layer) in layers.iter().enumerate() {
            let (inputs, outputs) = match layer {
                Layer::Dense(d) => {
                    if d.activation.is_terminal_only() && i + 1 != n {
                        return Err(Error::invalid(format!("{:?} allowed only on the output layer", d.activation)));
                    }
                    (Some(d.inputs()), Some(d.outputs()))
                }
                Layer::BatchNorm(bn) => (Some(bn.features()), Some(bn.features())),
                Layer::Dropout { rate } => {
                    if !(0.0..1.0).contains(rate) {
                        return Err(Error::invalid(format!("dropout rate {rate} outside [0, 1)")));
                    }
                    (None, None)
                }
            };
            if let (Some(w), Some(inp)) = (width, inputs) {
                if w != inp {
                    return Err(Error::shape(format!("layer {i} expects width {inp}, previous layer gives {w}")));
                }
            }
            if outputs.is_some() {
                width = outputs;
            }
        }
        Ok(Network { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers
            .iter()
            .find_map(|l| match l {
                Layer::Dense(d) => Some(d.inputs()),
                Layer::BatchNorm(bn) => Some(bn.features()),
                Layer::Dropout { .. } => None,
            })
            .expect("network has a dense layer")
    }

    pub fn output_dim(&self) -> usize {
        self.output_layer().outputs()
    }

    pub fn head(&self) -> Activation {
        self.output_layer().activation
    }

    fn output_layer(&self) -> &DenseLayer {
        match self.layers.last() {
            Some(Layer::Dense(d)) => d,
            _ => unreachable!("validated in from_layers"),
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Dense(d) => d.w.len() + d.b.len(),
                Layer::BatchNorm(bn) => 2 * bn.features(),
                Layer::Dropout { .. } => 0,
            })
            .sum()
    }

    /// Trainable parameters flattened layer by layer: W row-major then b for
    /// dense layers, γ then β for batch norm.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            match l {
                Layer::Dense(d) => {
                    out.extend(d.w.iter());
                    out.extend(d.b.iter());
                }
                Layer::BatchNorm(bn) => {
                    out.extend(bn.gamma.iter());
                    out.extend(bn.beta.iter());
                }
                Layer::Dropout { .. } => {}
            }
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::shape(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            let slots: Vec<&mut f64> = match l {
                Layer::Dense(d) => d.w.iter_mut().chain(d.b.iter_mut()).collect(),
                Layer::BatchNorm(bn) => bn.gamma.iter_mut().chain(bn.beta.iter_mut()).collect(),
                Layer::Dropout { .. } => Vec::new(),
            };
            for s in slots {
                *s = it.next().expect("length checked");
            }
        }
        Ok(())
    }

    /// Forward pass without touching the network. Train mode uses batch
    /// statistics and draws dropout masks from `rng`.
    pub fn forward(&self, x: ArrayView2<f64>, mode: Mode, mut rng: Option<&mut Rng>) -> Result<ForwardPass> {
        if x.ncols() != self.input_dim() {
            return Err(Error::shape(format!(
                "network expects {} features, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for layer in &self.layers {
            match layer {
                Layer::Dense(d) => {
                    let z = d.pre_activation(h.view());
                    let a = d.activation.apply(z.view());
                    caches.push(Cache::Dense { input: h, z });
                    h = a;
                }
                Layer::BatchNorm(bn) => {
                    let (y, cache, train) = match mode {
                        Mode::Train => {
                            let (y, cache) = bn.forward_train(h.view())?;
                            (y, cache, true)
                        }
                        Mode::Infer => {
                            let inv_std = bn.running_var.mapv(|v| 1.0 / (v + bn.epsilon).sqrt());
                            let x_hat = (&h - &bn.running_mean) * &inv_std;
                            let y = &x_hat * &bn.gamma + &bn.beta;
                            let cache = BnCache {
                                x_hat,
                                inv_std,
                                mean: bn.running_mean.clone(),
                                var: bn.running_var.clone(),
                            };
                            (y, cache, false)
                        }
                    };
                    caches.push(Cache::BatchNorm { cache, train });
                    h = y;
                }
                Layer::Dropout { rate } => {
                    if mode == Mode::Train && *rate > 0.0 {
                        let rng = rng
                            .as_deref_mut()
                            .ok_or_else(|| Error::invalid("train-mode dropout needs a random stream"))?;
                        let keep = 1.0 - rate;
                        let mask = Array2::from_shape_simple_fn(h.raw_dim(), || {
                            if rng.random::<f64>() < keep {
                                1.0 / keep
                            } else {
                                0.0
                            }
                        });
                        h = &h * &mask;
                        caches.push(Cache::Dropout { mask: Some(mask) });
                    } else {
                        caches.push(Cache::Dropout { mask: None });
                    }
                }
            }
        }
        Ok(ForwardPass { caches, output: h })
    }

    /// Gradient of the loss with respect to every parameter, in the order of
    /// [`Network::params`]. `grad_z` is the loss gradient with respect to the
    /// output layer's pre-activation.
    pub fn backward(&self, pass: &ForwardPass, grad_z: ArrayView2<f64>) -> Result<Vec<f64>> {
        if grad_z.dim() != pass.output.dim() {
            return Err(Error::shape("output gradient shape differs from forward output"));
        }
        let mut chunks: Vec<Vec<f64>> = vec![Vec::new(); self.layers.len()];
        let mut upstream = grad_z.to_owned();
        let last = self.layers.len() - 1;
        for i in (0..self.layers.len()).rev() {
            match (&self.layers[i], &pass.caches[i]) {
                (Layer::Dense(d), Cache::Dense { input, z }) => {
                    let dz = if i == last {
                        upstream
                    } else {
                        let a = d.activation.apply(z.view());
                        d.activation.backward(z.view(), a.view(), upstream.view())
                    };
                    let dw = dz.t().dot(input);
                    let db = dz.sum_axis(Axis(0));
                    let mut chunk = Vec::with_capacity(dw.len() + db.len());
                    chunk.extend(dw.iter());
                    chunk.extend(db.iter());
                    chunks[i] = chunk;
                    upstream = dz.dot(&d.w);
                }
                (Layer::BatchNorm(bn), Cache::BatchNorm { cache, train }) => {
                    let (dx, dgamma, dbeta) = if *train {
                        bn.backward(cache, upstream.view())
                    } else {
                        let dbeta = upstream.sum_axis(Axis(0));
                        let dgamma = (&upstream * &cache.x_hat).sum_axis(Axis(0));
                        let dx = &upstream * &bn.gamma * &cache.inv_std;
                        (dx, dgamma, dbeta)
                    };
                    let mut chunk = Vec::with_capacity(2 * dgamma.len());
                    chunk.extend(dgamma.iter());
                    chunk.extend(dbeta.iter());
                    chunks[i] = chunk;
                    upstream = dx;
                }
                (Layer::Dropout { .. }, Cache::Dropout { mask }) => {
                    if let Some(mask) = mask {
                        upstream = upstream * mask;
                    }
                }
                _ => return Err(Error::invalid("forward pass does not belong to this network")),
            }
        }
        Ok(chunks.concat())
    }

    /// Loss and parameter gradient on one batch; the head must match `kind`.
    pub fn loss_and_gradient(
        &self,
        x: ArrayView2<f64>,
        y: ArrayView2<f64>,
        kind: LossKind,
        mode: Mode,
        rng: Option<&mut Rng>,
    ) -> Result<(f64, Vec<f64>, ForwardPass)> {
        if self.head() != kind.head() {
            return Err(Error::invalid(format!(
                "loss {kind:?} needs head {:?}, network has {:?}",
                kind.head(),
                self.head()
            )));
        }
        let pass = self.forward(x, mode, rng)?;
        let l = super::loss(pass.output.view(), y, kind)?;
        let gz = super::output_gradient(pass.output.view(), y, kind)?;
        let g = self.backward(&pass, gz.view())?;
        Ok((l, g, pass))
    }

    /// Folds the batch statistics of a train-mode pass into the running averages.
    pub fn apply_running_stats(&mut self, pass: &ForwardPass) {
        for (layer, cache) in self.layers.iter_mut().zip(&pass.caches) {
            if let (Layer::BatchNorm(bn), Cache::BatchNorm { cache, train: true }) = (layer, cache) {
                bn.update_running(cache);
            }
        }
    }

    /// Inference-mode outputs.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward(x, Mode::Infer, None)?.output)
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|v| v.is_finite())
    }
}
