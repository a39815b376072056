//! AdamW and the warmup + cosine learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::nn::Params;
use crate::tensor::Tensor;

/// Linear warmup from 0 to `base` over `warmup` steps, then cosine decay to
/// exactly 0 at step `total - 1`.
pub fn lr_at(step: usize, total: usize, warmup: usize, base: f64) -> f64 {
    if step < warmup {
        return base * step as f64 / warmup as f64;
    }
    let span = total.saturating_sub(1).saturating_sub(warmup);
    if span == 0 {
        return if step == warmup { base } else { 0.0 };
    }
    let progress = ((step - warmup) as f64 / span as f64).min(1.0);
    if progress >= 1.0 {
        return 0.0;
    }
    0.5 * base * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-5,
        }
    }
}

/// Adam with decoupled weight decay over every tensor of a parameter store.
pub struct AdamW {
    pub config: AdamWConfig,
    params: Vec<Tensor>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamW {
    pub fn new(params: &Params, config: AdamWConfig) -> Self {
        let params: Vec<Tensor> = params.named().into_iter().map(|(_, t)| t).collect();
        let m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        let v = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        AdamW {
            config,
            params,
            m,
            v,
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Applies one update with learning rate `lr` using the accumulated
    /// gradients, then clears them. Tensors without a gradient still decay.
    pub fn step(&mut self, lr: f64) {
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for ((p, m), v) in self.params.iter().zip(&mut self.m).zip(&mut self.v) {
            let grad = p.grad();
            let mut data = p.data_mut();
            for (i, x) in data.iter_mut().enumerate() {
                *x -= lr * c.weight_decay * *x;
                let Some(g) = grad.as_ref().map(|g| g[i]) else { continue };
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                *x -= lr * mhat / (vhat.sqrt() + c.eps);
            }
            drop(data);
            p.zero_grad();
        }
    }
}
