use super::TrainConfig;
use crate::error::{invalid, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam with decoupled weight decay. Moment buffers are created on the first
/// step to match the parameter shapes and must keep matching afterwards.
#[derive(Debug, Clone, Default)]
pub struct AdamW {
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        Self { weight_decay, ..Self::default() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) -> Result<()> {
        if params.len() != grads.len() {
            return invalid(format!("{} parameter tensors but {} gradients", params.len(), grads.len()));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() {
                return invalid(format!("tensor {i}: parameter length {} but gradient length {}", p.len(), g.len()));
            }
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        } else if self.m.len() != params.len() || self.m.iter().zip(params.iter()).any(|(m, p)| m.len() != p.len()) {
            return invalid("parameter shapes changed between optimizer steps");
        }
        self.step += 1;
        let c1 = 1.0 - BETA1.powi(self.step as i32);
        let c2 = 1.0 - BETA2.powi(self.step as i32);
        let decay = 1.0 - lr * self.weight_decay;
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for j in 0..p.len() {
                m[j] = BETA1 * m[j] + (1.0 - BETA1) * g[j];
                v[j] = BETA2 * v[j] + (1.0 - BETA2) * g[j] * g[j];
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                p[j] = p[j] * decay - lr * m_hat / (v_hat.sqrt() + EPSILON);
            }
        }
        Ok(())
    }
}

/// Multiplicative learning-rate factor for a 0-based epoch: linear from the
/// start factor at epoch 0 to the end factor at epoch `max_epochs − 1`, then flat.
pub fn lr_schedule(epoch: usize, config: &TrainConfig) -> f64 {
    let span = config.max_epochs.saturating_sub(1);
    if span == 0 {
        return config.start_factor;
    }
    let t = (epoch.min(span)) as f64 / span as f64;
    config.start_factor + (config.end_factor - config.start_factor) * t
}
