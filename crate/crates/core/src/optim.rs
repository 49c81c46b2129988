//! AdamW with decoupled weight decay, global-norm gradient clipping, and
//! early stopping on a validation metric.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::nn::params::{ParamId, ParamStore};
use crate::nn::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            clip_norm: 1.0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(CoreError::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(CoreError::Config(format!("{name} must be in [0, 1), got {beta}")));
            }
        }
        if !(self.clip_norm > 0.0) {
            return Err(CoreError::Config(format!(
                "clip_norm must be > 0, got {}",
                self.clip_norm
            )));
        }
        if self.weight_decay < 0.0 {
            return Err(CoreError::Config("weight_decay must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Moments {
    m: Tensor,
    v: Tensor,
    /// Number of updates applied to this parameter (for bias correction).
    t: u64,
}

/// AdamW optimizer. Moment state is allocated lazily per parameter, so a
/// step may target any subset of the store (e.g. shared params plus the
/// active task's head).
#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: OptimConfig,
    moments: Vec<Option<Moments>>,
}

impl AdamW {
    pub fn new(config: OptimConfig) -> Result<Self> {
        config.validate()?;
        Ok(AdamW {
            config,
            moments: Vec::new(),
        })
    }

    /// Update rule per parameter coordinate:
    ///   m <- b1*m + (1-b1)*g
    ///   v <- b2*v + (1-b2)*g^2
    ///   theta <- theta - lr * mhat / (sqrt(vhat) + eps) - lr * wd * theta
    /// with bias-corrected mhat, vhat and the decay term decoupled from the
    /// adaptive term (applied to the pre-step theta).
    pub fn step(&mut self, store: &mut ParamStore, ids: &[ParamId]) -> Result<()> {
        // Abort before touching anything if any gradient is non-finite.
        for id in ids {
            if !store.node(*id).grad.is_finite() {
                return Err(CoreError::Numeric(format!(
                    "non-finite gradient in {}",
                    store.node(*id).name
                )));
            }
        }
        if self.moments.len() < store.len() {
            self.moments.resize(store.len(), None);
        }
        let cfg = self.config;
        for id in ids {
            let node = store.node_mut(*id);
            if !node.trainable {
                continue;
            }
            let slot = &mut self.moments[id.index()];
            let moments = slot.get_or_insert_with(|| Moments {
                m: Tensor::zeros(node.value.shape().to_vec()),
                v: Tensor::zeros(node.value.shape().to_vec()),
                t: 0,
            });
            moments.t += 1;
            let bc1 = 1.0 - cfg.beta1.powi(moments.t as i32);
            let bc2 = 1.0 - cfg.beta2.powi(moments.t as i32);
            let values = node.value.data_mut();
            let grads = node.grad.data();
            let ms = moments.m.data_mut();
            let vs = moments.v.data_mut();
            for i in 0..values.len() {
                let g = grads[i];
                ms[i] = cfg.beta1 * ms[i] + (1.0 - cfg.beta1) * g;
                vs[i] = cfg.beta2 * vs[i] + (1.0 - cfg.beta2) * g * g;
                let mhat = ms[i] / bc1;
                let vhat = vs[i] / bc2;
                let theta = values[i];
                values[i] = theta - cfg.lr * mhat / (vhat.sqrt() + cfg.eps)
                    - cfg.lr * cfg.weight_decay * theta;
            }
        }
        Ok(())
    }

    /// Drop all moment state (used at pre-training phase boundaries).
    pub fn reset(&mut self) {
        self.moments.clear();
    }
}

/// Scale the listed gradients so their joint L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(store: &mut ParamStore, ids: &[ParamId], max_norm: f64) -> Result<f64> {
    let mut sq_sum = 0.0;
    for id in ids {
        for g in store.node(*id).grad.data() {
            sq_sum += g * g;
        }
    }
    let norm = sq_sum.sqrt();
    if !norm.is_finite() {
        return Err(CoreError::Numeric("non-finite gradient norm".into()));
    }
    if norm > max_norm {
        let scale = max_norm / norm;
        for id in ids {
            for g in store.node_mut(*id).grad.data_mut() {
                *g *= scale;
            }
        }
    }
    Ok(norm)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Early stopping on a higher-is-better validation score. Improvement must
/// exceed the running best by more than 1e-12; ties count as stalls.
#[derive(Debug, Clone)]
pub struct EarlyStop {
    pub best_score: f64,
    pub best_epoch: usize,
    pub patience: usize,
    pub stalled: usize,
}

impl EarlyStop {
    pub fn new(patience: usize) -> Self {
        EarlyStop {
            best_score: f64::NEG_INFINITY,
            best_epoch: 0,
            patience,
            stalled: 0,
        }
    }

    pub fn update(&mut self, score: f64, epoch: usize) -> StopDecision {
        if score > self.best_score + 1e-12 {
            self.best_score = score;
            self.best_epoch = epoch;
            self.stalled = 0;
            StopDecision::Improved
        } else {
            self.stalled += 1;
            if self.stalled >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        }
    }
}
