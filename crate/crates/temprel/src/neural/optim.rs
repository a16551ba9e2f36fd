//! Adam with bias correction, global-norm gradient clipping, and step
//! learning-rate decay.

use serde::{Deserialize, Serialize};

use super::tape::ParamSet;
use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub lr_decay: f64,
    pub lr_period: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            epochs: 20,
            batch_size: 32,
            seed: 7,
            lr_decay: 0.5,
            lr_period: 10,
        }
    }
}

/// lr = base * decay^floor(epoch / period).
pub fn step_lr(config: &TrainConfig, epoch: usize) -> f64 {
    config.lr * config.lr_decay.powi((epoch / config.lr_period) as i32)
}

#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(ps: &ParamSet) -> Self {
        AdamState {
            m: ps.params.iter().map(|p| Tensor::zeros(&p.value.shape)).collect(),
            v: ps.params.iter().map(|p| Tensor::zeros(&p.value.shape)).collect(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, ps: &mut ParamSet, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, p) in ps.params.iter_mut().enumerate() {
            for k in 0..p.value.len() {
                let g = p.grad.data[k];
                let m = &mut self.m[i].data[k];
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                let v = &mut self.v[i].data[k];
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                p.value.data[k] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Scales all gradients so their global L2 norm is at most `max_norm`.
pub fn clip_global_norm(ps: &mut ParamSet, max_norm: f64) {
    let norm_sq: f64 = ps
        .params
        .iter()
        .flat_map(|p| p.grad.data.iter())
        .map(|g| g * g)
        .sum();
    let norm = norm_sq.sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for p in &mut ps.params {
            for g in &mut p.grad.data {
                *g *= scale;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_lr_schedule() {
        let cfg = TrainConfig {
            lr: 0.01,
            lr_decay: 0.5,
            lr_period: 10,
            ..Default::default()
        };
        assert_eq!(step_lr(&cfg, 0), 0.01);
        assert_eq!(step_lr(&cfg, 9), 0.01);
        assert_eq!(step_lr(&cfg, 10), 0.005);
        assert_eq!(step_lr(&cfg, 25), 0.0025);
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut ps = ParamSet::new();
        ps.add("w", Tensor::vector(vec![1.0, -2.0]));
        let mut adam = AdamState::new(&ps);
        adam.step(&mut ps, 0.1);
        assert_eq!(ps.params[0].value.data, vec![1.0, -2.0]);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn single_step_with_unit_gradient_moves_by_about_lr() {
        let mut ps = ParamSet::new();
        ps.add("w", Tensor::scalar(0.0));
        ps.params[0].grad.data[0] = 1.0;
        let mut adam = AdamState::new(&ps);
        adam.step(&mut ps, 0.01);
        // bias-corrected m_hat = v_hat = 1 on the first step
        let expected = -0.01 / (1.0 + 1e-8);
        assert!((ps.params[0].value.data[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_update_approaches_lr_sign() {
        let mut ps = ParamSet::new();
        ps.add("w", Tensor::scalar(0.0));
        let mut adam = AdamState::new(&ps);
        let lr = 1e-3;
        let mut prev = 0.0;
        let mut delta = 0.0;
        for _ in 0..10_000 {
            ps.params[0].grad.data[0] = 2.5;
            adam.step(&mut ps, lr);
            delta = ps.params[0].value.data[0] - prev;
            prev = ps.params[0].value.data[0];
        }
        assert!((delta.abs() - lr).abs() < 1e-6);
        assert!(delta < 0.0);
    }

    #[test]
    fn clipping_caps_global_norm() {
        let mut ps = ParamSet::new();
        ps.add("a", Tensor::vector(vec![0.0, 0.0]));
        ps.params[0].grad.data = vec![3.0, 4.0];
        clip_global_norm(&mut ps, 5.0);
        assert_eq!(ps.params[0].grad.data, vec![3.0, 4.0]); // norm exactly 5
        ps.params[0].grad.data = vec![30.0, 40.0];
        clip_global_norm(&mut ps, 5.0);
        assert!((ps.params[0].grad.data[0] - 3.0).abs() < 1e-12);
        assert!((ps.params[0].grad.data[1] - 4.0).abs() < 1e-12);
    }
}
