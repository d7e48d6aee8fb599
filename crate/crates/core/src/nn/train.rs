use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Layer, LossKind, Mode, NetSpec, Network, OptimizerConfig, OptimizerState};
use crate::data::{LabelVocabulary, ProbMatrix, RngSeed};
use crate::error::{Error, Result};
use crate::metrics::fbeta_counts;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monitor {
    ValLoss,
    ValF2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EarlyStopping {
    pub patience: usize,
    pub monitor: Monitor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub optimizer: OptimizerConfig,
    pub early_stopping: Option<EarlyStopping>,
    /// Return the parameters of the epoch with the highest validation F2.
    pub checkpoint: bool,
    pub seed: RngSeed,
    /// `(epoch, alpha)` pairs: from `epoch` on, the step size is `alpha`.
    pub lr_schedule: Vec<(usize, f64)>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossKind::Bce,
            batch_size: 128,
            max_epochs: 100,
            optimizer: OptimizerConfig::default(),
            early_stopping: Some(EarlyStopping { patience: 5, monitor: Monitor::ValLoss }),
            checkpoint: true,
            seed: RngSeed::default(),
            lr_schedule: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if let Some(es) = self.early_stopping {
            if es.patience == 0 {
                return Err(Error::invalid("patience must be at least 1"));
            }
        }
        self.optimizer.validate()?;
        for &(_, lr) in &self.lr_schedule {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::invalid(format!("learning rate {lr} in schedule is not positive")));
            }
        }
        Ok(())
    }

    fn alpha_at(&self, epoch: usize) -> f64 {
        self.lr_schedule
            .iter()
            .filter(|(e, _)| *e <= epoch)
            .max_by_key(|(e, _)| *e)
            .map_or(self.optimizer.alpha, |&(_, lr)| lr)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_f2: Option<f64>,
    pub alpha: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were returned.
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub network: Network,
    pub history: History,
    pub config: TrainConfig,
}

/// Sample-averaged F2 of `pred ≥ 0.5` against 0/1 `truth`.
pub(crate) fn sample_f2(pred: ArrayView2<f64>, truth: ArrayView2<f64>) -> f64 {
    let n = pred.nrows();
    if n == 0 {
        return 0.0;
    }
    let total: f64 = pred
        .axis_iter(Axis(0))
        .zip(truth.axis_iter(Axis(0)))
        .map(|(p, y)| {
            let (mut tp, mut fp, mut fn_) = (0, 0, 0);
            for (&p, &y) in p.iter().zip(y.iter()) {
                match (p >= 0.5, y > 0.5) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    (false, false) => {}
                }
            }
            fbeta_counts(tp, fp, fn_, 2.0)
        })
        .sum();
    total / n as f64
}

fn select(x: ArrayView2<f64>, rows: &[usize]) -> Array2<f64> {
    x.select(Axis(0), rows)
}

/// Builds a network from `spec` (initialized from the config seed) and trains it.
pub fn train(
    spec: &NetSpec,
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    val: Option<(ArrayView2<f64>, ArrayView2<f64>)>,
    config: &TrainConfig,
) -> Result<TrainedModel> {
    if spec.head != config.loss.head() {
        return Err(Error::invalid(format!(
            "loss {:?} needs head {:?}, spec has {:?}",
            config.loss,
            config.loss.head(),
            spec.head
        )));
    }
    let net = Network::new(spec, &mut config.seed.substream(0))?;
    train_network(net, x, y, val, config)
}

/// Mini-batch training of an existing network.
pub fn train_network(
    mut net: Network,
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    val: Option<(ArrayView2<f64>, ArrayView2<f64>)>,
    config: &TrainConfig,
) -> Result<TrainedModel> {
    config.validate()?;
    let n = x.nrows();
    if n == 0 {
        return Err(Error::invalid("no training samples"));
    }
    if y.nrows() != n || y.ncols() != net.output_dim() || x.ncols() != net.input_dim() {
        return Err(Error::shape(format!(
            "training data {:?} / {:?} does not fit a {} → {} network",
            x.dim(),
            y.dim(),
            net.input_dim(),
            net.output_dim()
        )));
    }
    config.loss.validate(net.output_dim())?;
    if net.head() != config.loss.head() {
        return Err(Error::invalid(format!("loss {:?} does not match head {:?}", config.loss, net.head())));
    }
    let needs_val = config.checkpoint || config.early_stopping.is_some();
    if let Some((xv, yv)) = val {
        if xv.nrows() == 0 {
            if needs_val {
                return Err(Error::invalid("validation data is empty"));
            }
        } else if xv.ncols() != x.ncols() || yv.dim() != (xv.nrows(), y.ncols()) {
            return Err(Error::shape("validation data shape does not match training data"));
        }
    } else if needs_val {
        return Err(Error::invalid("early stopping and checkpointing need validation data"));
    }
    let val = val.filter(|(xv, _)| xv.nrows() > 0);

    let has_bn = net.layers().iter().any(|l| matches!(l, Layer::BatchNorm(_)));
    let mut state = OptimizerState::new(config.optimizer, net.param_count())?;
    let mut rng = config.seed.substream(1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = History::default();
    let mut last_finite = net.clone();
    let mut best: Option<(f64, Network)> = None;
    let mut best_monitor = f64::NAN;
    let mut stale = 0usize;

    for epoch in 0..config.max_epochs {
        state.config.alpha = config.alpha_at(epoch);
        order.shuffle(&mut rng);
        let mut batches: Vec<&[usize]> = order.chunks(config.batch_size).collect();
        // a trailing single-row batch cannot be batch-normalized; fold it into its neighbour
        if has_bn && batches.len() > 1 && batches.last().map(|b| b.len()) == Some(1) {
            batches.pop();
            let k = batches.len() - 1;
            batches[k] = &order[k * config.batch_size..];
        }
        let mut loss_sum = 0.0;
        for rows in batches {
            let xb = select(x, rows);
            let yb = select(y, rows);
            let (l, grads, pass) = net.loss_and_gradient(xb.view(), yb.view(), config.loss, Mode::Train, Some(&mut rng))?;
            if !l.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { epoch, last_finite: Box::new(last_finite) });
            }
            let mut params = net.params();
            state.step(&mut params, &grads)?;
            net.set_params(&params)?;
            net.apply_running_stats(&pass);
            if !net.is_finite() {
                return Err(Error::Diverged { epoch, last_finite: Box::new(last_finite) });
            }
            loss_sum += l * rows.len() as f64;
        }
        last_finite = net.clone();

        let mut record = EpochRecord { epoch, train_loss: loss_sum / n as f64, val_loss: None, val_f2: None, alpha: state.config.alpha };
        if let Some((xv, yv)) = val {
            let pred = net.predict(xv)?;
            record.val_loss = Some(super::loss(pred.view(), yv, config.loss)?);
            record.val_f2 = Some(sample_f2(pred.view(), yv));
        }
        let val_loss = record.val_loss;
        let val_f2 = record.val_f2;
        history.epochs.push(record);

        if let (true, Some(f2)) = (config.checkpoint, val_f2) {
            if best.as_ref().is_none_or(|(b, _)| f2 > *b) {
                best = Some((f2, net.clone()));
                history.best_epoch = Some(epoch);
            }
        }
        if let Some(es) = config.early_stopping {
            let value = match es.monitor {
                Monitor::ValLoss => val_loss.map(|v| -v),
                Monitor::ValF2 => val_f2,
            }
            .expect("validation checked above");
            if best_monitor.is_nan() || value > best_monitor {
                best_monitor = value;
                stale = 0;
            } else {
                stale += 1;
                if stale >= es.patience {
                    history.stopped_early = true;
                    break;
                }
            }
        }
    }

    let network = match best {
        Some((_, best_net)) => best_net,
        None => {
            history.best_epoch = history.epochs.last().map(|r| r.epoch);
            net
        }
    };
    Ok(TrainedModel { network, history, config: config.clone() })
}

/// Inference-mode probabilities labelled with `vocab`.
pub fn predict(model: &TrainedModel, inputs: ArrayView2<f64>, vocab: std::sync::Arc<LabelVocabulary>) -> Result<ProbMatrix> {
    if vocab.len() != model.network.output_dim() {
        return Err(Error::shape(format!(
            "vocabulary has {} labels, model outputs {}",
            vocab.len(),
            model.network.output_dim()
        )));
    }
    let out = model.network.predict(inputs)?;
    ProbMatrix::new(out.mapv(|v| v.clamp(0.0, 1.0)), vocab)
}
