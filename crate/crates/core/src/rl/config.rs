use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub rollout_length: usize,
    pub num_workers: usize,
    pub updates: usize,
    pub epochs: usize,
    pub minibatches: usize,
    pub clip: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub value_weight: f64,
    pub entropy_weight: f64,
    pub lr: f64,
    /// Decay the learning rate linearly to zero over `updates`.
    pub lr_decay: bool,
    pub adam_eps: f64,
    pub max_grad_norm: f64,
    pub checkpoint_every: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            rollout_length: 128,
            num_workers: 4,
            updates: 2000,
            epochs: 4,
            minibatches: 2,
            clip: 0.2,
            gamma: 0.99,
            lambda: 0.95,
            value_weight: 0.5,
            entropy_weight: 0.01,
            lr: 2.5e-4,
            lr_decay: true,
            adam_eps: 1e-5,
            max_grad_norm: 0.5,
            checkpoint_every: 100,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("rollout_length", self.rollout_length),
            ("num_workers", self.num_workers),
            ("epochs", self.epochs),
            ("minibatches", self.minibatches),
            ("checkpoint_every", self.checkpoint_every),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("ppo.{name} must be at least 1")));
            }
        }
        if self.minibatches > self.num_workers {
            return Err(Error::Config("ppo.minibatches cannot exceed ppo.num_workers".into()));
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return Err(Error::Config("ppo.clip must lie in (0, 1)".into()));
        }
        for (name, v) in [("gamma", self.gamma), ("lambda", self.lambda)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Config(format!("ppo.{name} must lie in (0, 1]")));
            }
        }
        if !(self.lr > 0.0 && self.adam_eps > 0.0 && self.max_grad_norm > 0.0) {
            return Err(Error::Config("ppo.lr, adam_eps and max_grad_norm must be positive".into()));
        }
        if !(self.value_weight >= 0.0 && self.entropy_weight >= 0.0) {
            return Err(Error::Config("ppo loss weights must be non-negative".into()));
        }
        Ok(())
    }

    /// Learning rate for update `u` (0-based).
    pub fn lr_at(&self, u: usize) -> f64 {
        if self.lr_decay && self.updates > 0 {
            self.lr * (1.0 - u as f64 / self.updates as f64)
        } else {
            self.lr
        }
    }
}
