//! Central finite-difference check of window-loss gradients.

use crate::error::{invalid, Result};

use super::model::{Geometry, ModelParams};
use super::objective::{normalized_loss, window_forward, window_loss_grad};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub n_checked: usize,
    /// Largest `|a − fd| / max(|a|, |fd|, 1e-8)`.
    pub worst: f64,
    pub worst_param: usize,
}

/// Compares the reverse-mode gradient against central differences on
/// `n_params` parameters spread evenly over the flat parameter vector.
pub fn check_window_gradient(
    model: &ModelParams,
    geom: &Geometry,
    globals: &[f64],
    truth: &[&[f64]],
    dt: f64,
    n_params: usize,
    eps: f64,
) -> Result<GradCheck> {
    let (_, grad) = window_loss_grad(model, geom, globals, truth, dt)?;
    let analytic = grad.flatten();
    let base = model.net.flatten();
    if n_params == 0 || n_params > base.len() {
        return Err(invalid(format!("can check 1..={} parameters, asked for {n_params}", base.len())));
    }
    let mut probe = model.clone();
    let mut loss_with = |p: usize, delta: f64| -> Result<f64> {
        let mut theta = base.clone();
        theta[p] += delta;
        probe.net.unflatten(&theta)?;
        let pred = window_forward(&probe, geom, globals, truth, dt)?;
        normalized_loss(&probe, &pred, truth)
    };
    let mut out = GradCheck {
        n_checked: 0,
        worst: 0.0,
        worst_param: 0,
    };
    for k in 0..n_params {
        let p = k * base.len() / n_params;
        let fd = (loss_with(p, eps)? - loss_with(p, -eps)?) / (2.0 * eps);
        let a = analytic[p];
        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
        if !(rel <= out.worst) {
            out.worst = rel;
            out.worst_param = p;
        }
        out.n_checked += 1;
    }
    Ok(out)
}
