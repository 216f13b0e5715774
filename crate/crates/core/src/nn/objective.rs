//! Free-running window loss, its exact gradient, and model rollouts.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::field::{GlobalParams, StateField};
use crate::mesh::{EdgeSet, Mesh, Point};
use crate::simulate::{axpy_stages, rollout, Derivative, RolloutFailure, RolloutResult, StepDiagnostics};

use super::model::{EvalTape, Geometry, ModelParams, Network};

/// Mean over steps and nodes of `Σ_c ((ŝ − s) / σ_c)²`, with `σ` the
/// per-channel state scale. Frame 0 is the shared initial condition.
pub fn normalized_loss(model: &ModelParams, pred: &[Vec<f64>], truth: &[&[f64]]) -> Result<f64> {
    if pred.len() != truth.len() || pred.len() < 2 {
        return Err(invalid("loss needs matching sequences with at least one step"));
    }
    let nc = model.config.n_channels();
    let n = pred[0].len() / nc;
    let mut total = 0.0;
    for (p, t) in pred[1..].iter().zip(&truth[1..]) {
        if p.len() != t.len() {
            return Err(invalid("prediction and truth shapes differ"));
        }
        for (k, (a, b)) in p.iter().zip(t.iter()).enumerate() {
            let e = (a - b) / model.norm.state_std[k % nc];
            total += e * e;
        }
    }
    Ok(total / (n * (pred.len() - 1)) as f64)
}

struct StepRecord {
    tapes: Vec<EvalTape>,
}

/// Rolls `truth[0]` forward `truth.len() − 1` steps and returns the
/// predicted states (including the initial one).
pub fn window_forward(
    model: &ModelParams,
    geom: &Geometry,
    globals: &[f64],
    truth: &[&[f64]],
    dt: f64,
) -> Result<Vec<Vec<f64>>> {
    run_window(model, geom, globals, truth[0], truth.len() - 1, dt, false).map(|(p, _)| p)
}

fn run_window(
    model: &ModelParams,
    geom: &Geometry,
    globals: &[f64],
    s0: &[f64],
    steps: usize,
    dt: f64,
    record: bool,
) -> Result<(Vec<Vec<f64>>, Vec<StepRecord>)> {
    let tab = model.config.integrator.tableau();
    let mut states = vec![s0.to_vec()];
    let mut records = Vec::new();
    for step in 1..=steps {
        let y = states.last().unwrap();
        let mut stages: Vec<Vec<f64>> = Vec::with_capacity(tab.stages());
        let mut tapes = Vec::new();
        for i in 0..tab.stages() {
            let yi = axpy_stages(y, dt, tab.a[i], &stages);
            let (k, tape) = model.forward_taped(geom, &yi, globals).map_err(|e| match e {
                Error::NumericOverflow { .. } => Error::Divergence { step },
                e => e,
            })?;
            if record {
                tapes.push(tape);
            }
            stages.push(k);
        }
        let next = axpy_stages(y, dt, tab.b, &stages);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step });
        }
        states.push(next);
        if record {
            records.push(StepRecord { tapes });
        }
    }
    Ok((states, records))
}

/// Loss of one free-running window and its gradient with respect to every
/// network parameter.
pub fn window_loss_grad(
    model: &ModelParams,
    geom: &Geometry,
    globals: &[f64],
    truth: &[&[f64]],
    dt: f64,
) -> Result<(f64, Network)> {
    let mut grad = model.net.zeros_like();
    let loss = accumulate_window_grad(model, geom, globals, truth, dt, 1.0, &mut grad)?;
    Ok((loss, grad))
}

/// Adds `scale · ∂loss/∂θ` into `grad` and returns the window loss.
pub fn accumulate_window_grad(
    model: &ModelParams,
    geom: &Geometry,
    globals: &[f64],
    truth: &[&[f64]],
    dt: f64,
    scale: f64,
    grad: &mut Network,
) -> Result<f64> {
    if truth.len() < 2 {
        return Err(invalid("a window needs at least one step"));
    }
    let steps = truth.len() - 1;
    let (states, records) = run_window(model, geom, globals, truth[0], steps, dt, true)?;
    let loss = normalized_loss(model, &states, truth)?;
    let nc = model.config.n_channels();
    let n = truth[0].len() / nc;
    let norm = 2.0 * scale / (n * steps) as f64;
    let tab = model.config.integrator.tableau();
    let ns = tab.stages();
    let mut ybar = vec![0.0; truth[0].len()];
    for step in (0..steps).rev() {
        for (k, yb) in ybar.iter_mut().enumerate() {
            let sd = model.norm.state_std[k % nc];
            *yb += norm * (states[step + 1][k] - truth[step + 1][k]) / (sd * sd);
        }
        let g = ybar.clone();
        let mut stage_bar: Vec<Vec<f64>> = vec![Vec::new(); ns];
        for i in (0..ns).rev() {
            let mut kbar: Vec<f64> = g.iter().map(|v| dt * tab.b[i] * v).collect();
            for l in i + 1..ns {
                let a = tab.a[l][i];
                if a != 0.0 {
                    for (kb, yl) in kbar.iter_mut().zip(&stage_bar[l]) {
                        *kb += dt * a * yl;
                    }
                }
            }
            let yi_bar = model.backward(geom, &records[step].tapes[i], &kbar, grad)?;
            for (yb, v) in ybar.iter_mut().zip(&yi_bar) {
                *yb += v;
            }
            stage_bar[i] = yi_bar;
        }
    }
    Ok(loss)
}

/// How operator geometry follows lagrangian displacement channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RebuildPolicy {
    /// Operators built once from the initial state.
    #[default]
    Frozen,
    /// Operators rebuilt from the predicted positions before every step.
    EveryStep,
}

impl std::str::FromStr for RebuildPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frozen" => Ok(Self::Frozen),
            "every-step" => Ok(Self::EveryStep),
            other => Err(invalid(format!("unknown rebuild policy {other:?}"))),
        }
    }
}

impl std::fmt::Display for RebuildPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Frozen => "frozen",
            Self::EveryStep => "every-step",
        })
    }
}

/// The learned operator as a [`Derivative`] on one mesh.
pub struct ModelRhs<'a> {
    model: &'a ModelParams,
    geometry: Geometry,
    globals: Vec<f64>,
    reference: Vec<Point>,
    policy: RebuildPolicy,
}

impl<'a> ModelRhs<'a> {
    pub fn new(
        model: &'a ModelParams,
        mesh: &Mesh,
        edges: &EdgeSet,
        initial: &StateField,
        globals: &GlobalParams,
        policy: RebuildPolicy,
    ) -> Result<Self> {
        if initial.channels() != model.config.channels.as_slice() {
            return Err(invalid(format!(
                "state channels {:?} do not match the model channels {:?}",
                initial.channels(),
                model.config.channels
            )));
        }
        let mut geometry = model.geometry(mesh, edges)?;
        let reference = mesh.positions().to_vec();
        if model.config.lagrangian.is_some() {
            geometry = geometry.rebuild(&model.positions_for(&reference, initial.values()))?;
        }
        Ok(Self {
            model,
            geometry,
            globals: model.global_features(globals)?,
            reference,
            policy,
        })
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }
}

impl Derivative for ModelRhs<'_> {
    fn eval(&mut self, state: &StateField) -> Result<Vec<f64>> {
        self.model.forward(&self.geometry, state.values(), &self.globals)
    }

    fn begin_step(&mut self, state: &StateField) -> Result<StepDiagnostics> {
        let mut rebuilt = false;
        if self.model.config.lagrangian.is_some() && self.policy == RebuildPolicy::EveryStep {
            let pos = self.model.positions_for(&self.reference, state.values());
            if !self.geometry.is_fresh_for(&pos) {
                self.geometry = self.geometry.rebuild(&pos)?;
                rebuilt = true;
            }
        }
        Ok(StepDiagnostics {
            operators_rebuilt: rebuilt,
            regularized_nodes: self.geometry.regularized_nodes(),
        })
    }
}

/// Autoregressive rollout of a trained model from `s0`.
pub fn rollout_model(
    model: &ModelParams,
    mesh: &Mesh,
    edges: &EdgeSet,
    s0: &StateField,
    globals: &GlobalParams,
    n_steps: usize,
    policy: RebuildPolicy,
) -> std::result::Result<RolloutResult, RolloutFailure> {
    let fail = |error| RolloutFailure {
        step: 0,
        error,
        partial: RolloutResult {
            frames: vec![s0.clone()],
            step_seconds: Vec::new(),
            diagnostics: Vec::new(),
        },
    };
    let dt = globals
        .dt()
        .ok_or_else(|| invalid("globals have no dt"))
        .map_err(fail)?;
    let mut rhs = ModelRhs::new(model, mesh, edges, s0, globals, policy).map_err(fail)?;
    rollout(model.config.integrator, &mut rhs, s0, dt, n_steps)
}
