//! Adam with a linear learning-rate warm-up.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub base_rate: f64,
    pub warmup_steps: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            base_rate: 1e-4,
            warmup_steps: 2000,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Moment accumulators for one [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step_count: u64,
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros = |_: ()| -> Vec<Tensor> {
            params
                .tensors()
                .iter()
                .map(|t| Tensor::zeros(t.shape()))
                .collect()
        };
        Self {
            config,
            step_count: 0,
            first: zeros(()),
            second: zeros(()),
        }
    }

    /// Rate used at 1-based step `k`: `base_rate * min(1, k / warmup_steps)`.
    pub fn rate_at(&self, k: u64) -> f64 {
        let c = &self.config;
        if c.warmup_steps == 0 {
            c.base_rate
        } else {
            c.base_rate * (k as f64 / c.warmup_steps as f64).min(1.0)
        }
    }

    /// Rate the next call to [`step`](Self::step) will use.
    pub fn next_rate(&self) -> f64 {
        self.rate_at(self.step_count + 1)
    }

    /// Applies one update. The step counter is incremented before the rate
    /// is evaluated, so the first update already moves with
    /// `base_rate / warmup_steps`.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor]) -> Result<()> {
        if grads.len() != params.len() || self.first.len() != params.len() {
            return Err(Error::Shape(format!(
                "optimizer got {} gradients for {} parameters ({} moment slots)",
                grads.len(),
                params.len(),
                self.first.len()
            )));
        }
        for ((name, p), g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::Shape(format!(
                    "gradient for `{name}` has shape {:?}, parameter {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            if !g.all_finite() {
                return Err(Error::NonFiniteGradient(name.to_string()));
            }
        }

        self.step_count += 1;
        let k = self.step_count;
        let c = self.config;
        let lr = self.rate_at(k);
        let bc1 = 1.0 - c.beta1.powi(k as i32);
        let bc2 = 1.0 - c.beta2.powi(k as i32);
        for (i, p) in params.tensors_mut().iter_mut().enumerate() {
            let g = grads[i].data();
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                let gj = g[j] + c.weight_decay * *w;
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                *w -= lr * mh / (vh.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}

/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            for x in g.data_mut() {
                *x *= s;
            }
        }
    }
    norm
}
