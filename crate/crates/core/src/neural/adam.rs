use super::ModelParams;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Full passes over the training series.
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub cosine_decay: bool,
    /// Seeds parameter initialization.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 20,
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            cosine_decay: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::arg("batch size must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::arg(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::arg("Adam betas must lie in [0, 1)"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::arg("Adam epsilon must be positive"));
        }
        Ok(())
    }

    /// Learning rate at 1-based `step` of `total_steps`.
    pub fn rate_at(&self, step: usize, total_steps: usize) -> f64 {
        if self.cosine_decay && total_steps > 0 {
            let progress = step as f64 / total_steps as f64;
            self.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
        } else {
            self.learning_rate
        }
    }
}

/// First and second moment estimates, shaped like the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: ModelParams,
    pub v: ModelParams,
    /// Horizon of the cosine schedule.
    pub total_steps: usize,
}

impl AdamState {
    pub fn new(params: &ModelParams, total_steps: usize) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            total_steps,
        }
    }
}

/// One bias-corrected Adam update at 1-based `step`.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    moments: &mut AdamState,
    step: usize,
    config: &TrainConfig,
) -> Result<()> {
    if step == 0 {
        return Err(Error::arg("Adam steps are counted from 1"));
    }
    let lr = config.rate_at(step, moments.total_steps);
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(step as i32);
    let c2 = 1.0 - b2.powi(step as i32);
    let grads = grads.tensors();
    let ms = moments.m.tensors_mut();
    let vs = moments.v.tensors_mut();
    let ps = params.tensors_mut();
    if grads.len() != ps.len() {
        return Err(Error::arg("gradient set does not match the parameters"));
    }
    for ((((name, p), (_, g)), (_, m)), (_, v)) in ps.into_iter().zip(grads).zip(ms).zip(vs) {
        if p.len() != g.len() || p.len() != m.len() || p.len() != v.len() {
            return Err(Error::arg(format!("gradient for {name} has the wrong size")));
        }
        for k in 0..p.len() {
            m[k] = b1 * m[k] + (1.0 - b1) * g[k];
            v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            p[k] -= lr * m_hat / (v_hat.sqrt() + config.epsilon);
        }
    }
    Ok(())
}
