//! Explicit time integrators and autoregressive rollouts.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::field::StateField;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    #[default]
    Euler,
    Heun,
    Rk4,
}

/// Explicit Butcher tableau. `a[i]` holds the coefficients of stages `0..i`.
#[derive(Debug, Clone, Copy)]
pub struct Tableau {
    pub a: &'static [&'static [f64]],
    pub b: &'static [f64],
}

impl Tableau {
    pub fn stages(&self) -> usize {
        self.b.len()
    }
}

const EULER: Tableau = Tableau {
    a: &[&[]],
    b: &[1.0],
};

const HEUN: Tableau = Tableau {
    a: &[&[], &[1.0]],
    b: &[0.5, 0.5],
};

const RK4: Tableau = Tableau {
    a: &[&[], &[0.5], &[0.0, 0.5], &[0.0, 0.0, 1.0]],
    b: &[1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0],
};

impl Integrator {
    pub fn tableau(self) -> &'static Tableau {
        match self {
            Integrator::Euler => &EULER,
            Integrator::Heun => &HEUN,
            Integrator::Rk4 => &RK4,
        }
    }

    /// Formal order of accuracy.
    pub fn order(self) -> u32 {
        match self {
            Integrator::Euler => 1,
            Integrator::Heun => 2,
            Integrator::Rk4 => 4,
        }
    }
}

impl std::str::FromStr for Integrator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "euler" => Ok(Integrator::Euler),
            "heun" => Ok(Integrator::Heun),
            "rk4" => Ok(Integrator::Rk4),
            other => Err(invalid(format!("unknown integrator {other:?}"))),
        }
    }
}

impl std::fmt::Display for Integrator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Integrator::Euler => "euler",
            Integrator::Heun => "heun",
            Integrator::Rk4 => "rk4",
        })
    }
}

/// `y + h Σ coeff_k · stages_k`, skipping zero coefficients.
pub(crate) fn axpy_stages(y: &[f64], h: f64, coeffs: &[f64], stages: &[Vec<f64>]) -> Vec<f64> {
    let mut out = y.to_vec();
    for (c, k) in coeffs.iter().zip(stages) {
        if *c == 0.0 {
            continue;
        }
        let f = h * c;
        for (o, v) in out.iter_mut().zip(k) {
            *o += f * v;
        }
    }
    out
}

/// One explicit step of `ds/dt = f(s)` on raw node-major values.
pub fn step_values<F>(integ: Integrator, f: &mut F, s: &[f64], dt: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if !(dt > 0.0) {
        return Err(invalid(format!("dt must be positive, got {dt}")));
    }
    let tab = integ.tableau();
    let mut stages: Vec<Vec<f64>> = Vec::with_capacity(tab.stages());
    for i in 0..tab.stages() {
        let y = axpy_stages(s, dt, tab.a[i], &stages);
        let k = f(&y)?;
        if k.len() != s.len() {
            return Err(invalid("derivative has the wrong length"));
        }
        stages.push(k);
    }
    Ok(axpy_stages(s, dt, tab.b, &stages))
}

/// Right-hand side of an autonomous system on a fixed mesh.
pub trait Derivative {
    fn eval(&mut self, state: &StateField) -> Result<Vec<f64>>;

    /// Called once before each full step with the step's starting state.
    /// Operators may be refreshed here; stages within a step never see a
    /// rebuild.
    fn begin_step(&mut self, _state: &StateField) -> Result<StepDiagnostics> {
        Ok(StepDiagnostics::default())
    }
}

impl<F> Derivative for F
where
    F: FnMut(&StateField) -> Result<Vec<f64>>,
{
    fn eval(&mut self, state: &StateField) -> Result<Vec<f64>> {
        self(state)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepDiagnostics {
    pub operators_rebuilt: bool,
    pub regularized_nodes: usize,
}

/// Advances `s` by one step. `step_index` is reported on divergence.
pub fn step<D: Derivative + ?Sized>(
    integ: Integrator,
    f: &mut D,
    s: &StateField,
    dt: f64,
    step_index: usize,
) -> Result<StateField> {
    let mut rhs = |v: &[f64]| f.eval(&s.with_values(v.to_vec(), s.time));
    let next = step_values(integ, &mut rhs, s.values(), dt)?;
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence { step: step_index });
    }
    Ok(s.with_values(next, s.time + dt))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult {
    /// Initial state followed by one frame per completed step.
    pub frames: Vec<StateField>,
    pub step_seconds: Vec<f64>,
    pub diagnostics: Vec<StepDiagnostics>,
}

/// A rollout that stopped early. `partial` holds every completed frame.
#[derive(Debug)]
pub struct RolloutFailure {
    pub step: usize,
    pub error: Error,
    pub partial: RolloutResult,
}

impl std::fmt::Display for RolloutFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "rollout stopped at step {} after {} frames: {}",
            self.step,
            self.partial.frames.len(),
            self.error
        )
    }
}

impl std::error::Error for RolloutFailure {}

impl From<RolloutFailure> for Error {
    fn from(f: RolloutFailure) -> Self {
        f.error
    }
}

/// Feeds each prediction back as the next input for `n_steps` steps.
pub fn rollout<D: Derivative + ?Sized>(
    integ: Integrator,
    f: &mut D,
    s0: &StateField,
    dt: f64,
    n_steps: usize,
) -> std::result::Result<RolloutResult, RolloutFailure> {
    let mut result = RolloutResult {
        frames: vec![s0.clone()],
        step_seconds: Vec::with_capacity(n_steps),
        diagnostics: Vec::with_capacity(n_steps),
    };
    if n_steps == 0 {
        return Err(RolloutFailure {
            step: 0,
            error: invalid("rollout needs at least one step"),
            partial: result,
        });
    }
    for k in 1..=n_steps {
        let start = Instant::now();
        let current = result.frames.last().unwrap();
        let outcome = f
            .begin_step(current)
            .and_then(|d| step(integ, f, current, dt, k).map(|s| (d, s)));
        match outcome {
            Ok((diag, next)) => {
                result.frames.push(next);
                result.diagnostics.push(diag);
                result.step_seconds.push(start.elapsed().as_secs_f64());
            }
            Err(error) => {
                let error = match error {
                    Error::NumericOverflow { .. } => Error::Divergence { step: k },
                    e => e,
                };
                return Err(RolloutFailure {
                    step: k,
                    error,
                    partial: result,
                });
            }
        }
    }
    Ok(result)
}

/// Mean over nodes and steps of the squared per-node error norm, excluding
/// the shared initial frame.
pub fn multi_step_loss(pred: &[StateField], truth: &[StateField]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(invalid(format!(
            "prediction has {} frames, truth has {}",
            pred.len(),
            truth.len()
        )));
    }
    if pred.len() < 2 {
        return Err(invalid("loss needs at least one step after the initial frame"));
    }
    let mut total = 0.0;
    let mut n_nodes = 0;
    for (p, t) in pred[1..].iter().zip(&truth[1..]) {
        if p.values().len() != t.values().len() || p.n_channels() != t.n_channels() {
            return Err(invalid("prediction and truth shapes differ"));
        }
        n_nodes = p.n_nodes();
        total += p
            .values()
            .iter()
            .zip(t.values())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    }
    Ok(total / (n_nodes * (pred.len() - 1)) as f64)
}

/// Max-norm global error at `t_end` for each step size in `dts`, each of
/// which must divide `t_end` into a whole number of steps.
pub fn global_errors<F>(integ: Integrator, f: &mut F, s0: &[f64], t_end: f64, exact: &[f64], dts: &[f64]) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if exact.len() != s0.len() {
        return Err(invalid("exact solution has the wrong length"));
    }
    dts.iter()
        .map(|&dt| {
            let n = (t_end / dt).round();
            if n < 1.0 || (n * dt - t_end).abs() > 1e-9 * t_end {
                return Err(invalid(format!("dt {dt} does not divide t_end {t_end}")));
            }
            let mut s = s0.to_vec();
            for _ in 0..n as usize {
                s = step_values(integ, f, &s, dt)?;
            }
            Ok(s.iter().zip(exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
        })
        .collect()
}

/// Least-squares slope of `log e` against `log dt`.
pub fn loglog_slope(dts: &[f64], errors: &[f64]) -> Result<f64> {
    if dts.len() != errors.len() || dts.len() < 2 {
        return Err(invalid("need at least two matching step sizes and errors"));
    }
    if errors.iter().chain(dts).any(|v| !(*v > 0.0)) {
        return Err(invalid("step sizes and errors must be positive"));
    }
    let x: Vec<f64> = dts.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = errors.iter().map(|v| v.ln()).collect();
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    Ok(sxy / sxx)
}
