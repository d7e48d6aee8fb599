use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Amsgrad,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig { kind: OptimizerKind::Adam, alpha: 0.001, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl OptimizerConfig {
    pub fn amsgrad() -> Self {
        OptimizerConfig { kind: OptimizerKind::Amsgrad, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha > 0.0
            && self.alpha.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid optimizer hyperparameters {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Running maximum of the raw second moment; AMSGrad only. The step
    /// divides it by the current bias correction.
    pub v_hat_max: Vec<f64>,
    pub t: u64,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, n_params: usize) -> Result<Self> {
        config.validate()?;
        let v_hat_max = match config.kind {
            OptimizerKind::Adam => Vec::new(),
            OptimizerKind::Amsgrad => vec![0.0; n_params],
        };
        Ok(OptimizerState { config, m: vec![0.0; n_params], v: vec![0.0; n_params], v_hat_max, t: 0 })
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        match self.config.kind {
            OptimizerKind::Adam => adam_step(self, params, grads),
            OptimizerKind::Amsgrad => amsgrad_step(self, params, grads),
        }
    }
}

fn moments(state: &mut OptimizerState, params: &[f64], grads: &[f64]) -> Result<(f64, f64)> {
    if params.len() != state.m.len() || grads.len() != state.m.len() {
        return Err(Error::shape(format!(
            "optimizer tracks {} parameters, got {} parameters and {} gradients",
            state.m.len(),
            params.len(),
            grads.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numerical(format!(
            "non-finite gradient {} at parameter {i} (step {})",
            grads[i],
            state.t + 1
        )));
    }
    state.t += 1;
    let OptimizerConfig { beta1, beta2, .. } = state.config;
    for ((m, v), &g) in state.m.iter_mut().zip(state.v.iter_mut()).zip(grads) {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
    }
    let t = state.t as i32;
    Ok((1.0 - beta1.powi(t), 1.0 - beta2.powi(t)))
}

pub fn adam_step(state: &mut OptimizerState, params: &mut [f64], grads: &[f64]) -> Result<()> {
    let (c1, c2) = moments(state, params, grads)?;
    let OptimizerConfig { alpha, epsilon, .. } = state.config;
    for (i, w) in params.iter_mut().enumerate() {
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        *w -= alpha * m_hat / (v_hat.sqrt() + epsilon);
    }
    Ok(())
}

pub fn amsgrad_step(state: &mut OptimizerState, params: &mut [f64], grads: &[f64]) -> Result<()> {
    if state.v_hat_max.len() != params.len() {
        state.v_hat_max = vec![0.0; params.len()];
    }
    let (c1, c2) = moments(state, params, grads)?;
    let OptimizerConfig { alpha, epsilon, .. } = state.config;
    for (i, w) in params.iter_mut().enumerate() {
        let m_hat = state.m[i] / c1;
        state.v_hat_max[i] = state.v_hat_max[i].max(state.v[i]);
        let v_hat = state.v_hat_max[i] / c2;
        *w -= alpha * m_hat / (v_hat.sqrt() + epsilon);
    }
    Ok(())
}
