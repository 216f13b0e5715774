//! AdamW with a cosine-annealed learning rate.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub lr0: f64,
    pub lr_min: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Steps over which the learning rate anneals from `lr0` to `lr_min`.
    pub total_steps: u64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamW {
    /// Standard moments and decay, `lr_min = 0.01 · lr0`.
    pub fn new(n_params: usize, lr0: f64, total_steps: u64) -> Self {
        Self {
            lr0,
            lr_min: 0.01 * lr0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            total_steps,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    /// `η(t) = η_min + ½(η₀ − η_min)(1 + cos(π t / T))`, held at `η_min`
    /// after `T`.
    pub fn learning_rate(&self, t: u64) -> f64 {
        if self.total_steps == 0 {
            return self.lr0;
        }
        let frac = (t.min(self.total_steps) as f64) / self.total_steps as f64;
        self.lr_min + 0.5 * (self.lr0 - self.lr_min) * (1.0 + (std::f64::consts::PI * frac).cos())
    }

    /// One update of `params` in place.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(invalid(format!(
                "optimizer holds {} moments, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        let lr = self.learning_rate(self.step);
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for k in 0..params.len() {
            let g = grads[k];
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g;
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[k] / c1;
            let vhat = self.v[k] / c2;
            params[k] -= lr * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * params[k]);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        let opt = AdamW::new(1, 1e-3, 100);
        assert_eq!(opt.learning_rate(0), 1e-3);
        assert!((opt.learning_rate(100) - 1e-5).abs() < 1e-18);
        assert!((opt.learning_rate(50) - 0.5 * (1e-3 + 1e-5)).abs() < 1e-15);
        assert_eq!(opt.learning_rate(500), opt.learning_rate(100));
    }

    #[test]
    fn zero_gradient_without_decay_is_identity() {
        let mut opt = AdamW::new(3, 1e-2, 10);
        opt.weight_decay = 0.0;
        let mut p = vec![1.0, -2.0, 0.5];
        for _ in 0..5 {
            opt.update(&mut p, &[0.0; 3]).unwrap();
        }
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut opt = AdamW::new(2, 0.1, 10);
        opt.weight_decay = 0.0;
        let mut p = vec![0.0, 0.0];
        opt.update(&mut p, &[3.0, -0.5]).unwrap();
        assert!((p[0] + 0.1).abs() < 1e-8);
        assert!((p[1] - 0.1).abs() < 1e-8);
    }

    #[test]
    fn decay_is_decoupled() {
        let mut opt = AdamW::new(1, 0.1, 0);
        let mut p = vec![2.0];
        opt.update(&mut p, &[0.0]).unwrap();
        assert!((p[0] - (2.0 - 0.1 * 0.01 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut opt = AdamW::new(2, 0.1, 1);
        assert!(opt.update(&mut [0.0; 3], &[0.0; 3]).is_err());
    }
}
