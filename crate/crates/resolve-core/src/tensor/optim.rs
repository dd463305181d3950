use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::array::Tensor;
use super::store::ParameterStore;

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    AdamW,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adam" => Ok(OptimizerKind::Adam),
            "adamw" => Ok(OptimizerKind::AdamW),
            other => Err(Error::Config(format!("unknown optimizer '{other}'"))),
        }
    }
}

#[derive(Copy, Clone, Debug)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl OptimizerConfig {
    pub fn adam(lr: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }

    pub fn adamw(lr: f64, weight_decay: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::AdamW,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("betas must lie in [0, 1)".into()));
        }
        if self.eps <= 0.0 {
            return Err(Error::Config("eps must be positive".into()));
        }
        Ok(())
    }
}

/// Adam/AdamW stepper; moment slots live in the parameter store.
pub struct OptimizerState {
    pub config: OptimizerConfig,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(OptimizerState { config, step: 0 })
    }

    /// Apply one update from the accumulated gradients and clear them.
    pub fn step<S: Scalar>(&mut self, store: &mut ParameterStore<S>) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let c = &self.config;
        let b1 = S::from_f64_lossy(c.beta1);
        let b2 = S::from_f64_lossy(c.beta2);
        let lr = S::from_f64_lossy(c.lr);
        let eps = S::from_f64_lossy(c.eps);
        let one = S::one();
        let bc1 = one - b1.powi(t);
        let bc2 = one - b2.powi(t);
        let decay = S::from_f64_lossy(c.weight_decay);
        let decoupled = c.kind == OptimizerKind::AdamW && c.weight_decay > 0.0;
        for p in store.params.values_mut() {
            if !p.trainable {
                continue;
            }
            let Some(grad) = p.grad.take() else { continue };
            let shape = p.value.shape().to_vec();
            let m = p.m.get_or_insert_with(|| Tensor::zeros(&shape));
            let v = p.v.get_or_insert_with(|| Tensor::zeros(&shape));
            for (((w, g), me), ve) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *me = b1 * *me + (one - b1) * *g;
                *ve = b2 * *ve + (one - b2) * *g * *g;
                let mhat = *me / bc1;
                let vhat = *ve / bc2;
                let mut delta = lr * mhat / (vhat.sqrt() + eps);
                if decoupled {
                    delta += lr * decay * *w;
                }
                *w = *w - delta;
            }
        }
        Ok(())
    }
}
