//! Adaptive per-parameter optimizer.
//!
//! Defaults to `beta1 = 0`, i.e. no first-moment momentum: each step divides
//! the raw gradient by a bias-corrected running RMS of past gradients.

use serde::{Deserialize, Serialize};

use crate::linalg::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; non-positive disables clipping.
    pub clip_norm: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 3e-3,
            beta1: 0.0,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    pub config: OptimConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(config: OptimConfig) -> Self {
        Self {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. `params` and `grads` must be listed in the same
    /// order on every call.
    pub fn step(&mut self, params: Vec<&mut Mat>, grads: Vec<&Mat>) {
        assert_eq!(params.len(), grads.len(), "param/grad count mismatch");
        if self.v.is_empty() {
            self.v = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            if self.config.beta1 > 0.0 {
                self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            }
        }
        let c = self.config;
        let norm = grads.iter().map(|g| g.sq_norm()).sum::<f64>().sqrt();
        let clip = if c.clip_norm > 0.0 && norm > c.clip_norm {
            c.clip_norm / norm
        } else {
            1.0
        };
        self.step += 1;
        let t = self.step as i32;
        let bc2 = 1.0 - c.beta2.powi(t);
        let bc1 = if c.beta1 > 0.0 { 1.0 - c.beta1.powi(t) } else { 1.0 };
        for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let v = &mut self.v[k];
            for i in 0..g.data.len() {
                let gi = g.data[i] * clip;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
                let num = if c.beta1 > 0.0 {
                    let m = &mut self.m[k];
                    m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
                    m[i] / bc1
                } else {
                    gi
                };
                p.data[i] -= c.lr * num / ((v[i] / bc2).sqrt() + c.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_a_quadratic() {
        let mut x = Mat::from_vec(1, 2, vec![3.0, -2.0]);
        let mut opt = Optimizer::new(OptimConfig {
            lr: 0.05,
            ..Default::default()
        });
        for _ in 0..500 {
            let g = Mat::from_vec(1, 2, vec![2.0 * x.data[0], 2.0 * x.data[1]]);
            opt.step(vec![&mut x], vec![&g]);
        }
        assert!(x.data.iter().all(|v| v.abs() < 0.1), "{:?}", x.data);
    }

    #[test]
    fn zero_lr_is_a_no_op() {
        let mut x = Mat::from_vec(1, 2, vec![1.0, 2.0]);
        let before = x.clone();
        let mut opt = Optimizer::new(OptimConfig {
            lr: 0.0,
            ..Default::default()
        });
        let g = Mat::from_vec(1, 2, vec![0.5, -0.5]);
        opt.step(vec![&mut x], vec![&g]);
        assert_eq!(x, before);
    }
}
