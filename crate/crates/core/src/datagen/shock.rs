//! Planar shock-tube cases, their time step rule and the parameter-grid split.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Case, Split};
use crate::error::{invalid, Error, Result};
use crate::field::{GlobalParams, StateField, DT_KEY};
use crate::mesh::make_regular_grid;

use super::euler::{primitive_to_conserved, rk4_step, totals, EulerGrid, GAMMA, NVAR};
use super::riemann::{sod_problem, Primitive, RiemannSolution, Wave};

pub const P_LEFT_KEY: &str = "p_left";
pub const RHO_LEFT_KEY: &str = "rho_left";
pub const SHOCK_CHANNELS: [&str; 3] = ["rho", "rho_ux", "E"];

/// How the wave speed `C` in `Δt = 0.5 Δx / C` is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CflRule {
    /// Fastest wave of the exact Riemann solution (the shock for these ratios).
    #[default]
    ExactWaveSpeed,
    /// `max(|u| + a)` over the two initial states.
    InitialCharacteristic,
}

impl std::str::FromStr for CflRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact-wave-speed" => Ok(Self::ExactWaveSpeed),
            "initial-characteristic" => Ok(Self::InitialCharacteristic),
            other => Err(invalid(format!("unknown CFL rule {other:?}"))),
        }
    }
}

impl std::fmt::Display for CflRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::ExactWaveSpeed => "exact-wave-speed",
            Self::InitialCharacteristic => "initial-characteristic",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShockCase {
    pub p_left: f64,
    pub rho_left: f64,
    pub p_ratio: f64,
    pub rho_ratio: f64,
    /// Diaphragm position measured from the left wall.
    pub x_diaphragm: f64,
    pub extent: f64,
    pub n_cells: usize,
    pub n_frames: usize,
    pub cfl: f64,
    pub cfl_rule: CflRule,
}

impl ShockCase {
    pub fn new(p_left: f64, rho_left: f64) -> Self {
        Self {
            p_left,
            rho_left,
            p_ratio: 10.0,
            rho_ratio: 8.0,
            x_diaphragm: 0.25,
            extent: 0.5,
            n_cells: 64,
            n_frames: 43,
            cfl: 0.5,
            cfl_rule: CflRule::default(),
        }
    }

    pub fn dx(&self) -> f64 {
        self.extent / self.n_cells as f64
    }

    pub fn grid(&self) -> EulerGrid {
        EulerGrid::square(self.n_cells, self.extent)
    }

    pub fn riemann(&self) -> Result<RiemannSolution> {
        sod_problem(self.p_left, self.rho_left, self.p_ratio, self.rho_ratio, GAMMA)
    }

    pub fn dt(&self) -> Result<f64> {
        cfl_timestep_with(self, self.dx())
    }

    fn validate(&self) -> Result<()> {
        let positive = [self.p_left, self.rho_left, self.p_ratio, self.rho_ratio, self.extent, self.cfl];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(invalid(format!("shock case parameters must be positive: {self:?}")));
        }
        if !(0.0..=self.extent).contains(&self.x_diaphragm) {
            return Err(invalid("diaphragm lies outside the domain"));
        }
        if self.n_frames < 2 {
            return Err(invalid("a trajectory needs at least two frames"));
        }
        Ok(())
    }
}

/// `0.5 Δx / C` for the default ratios and rule.
pub fn cfl_timestep(p_left: f64, rho_left: f64, dx: f64, rule: CflRule) -> Result<f64> {
    let mut case = ShockCase::new(p_left, rho_left);
    case.cfl_rule = rule;
    cfl_timestep_with(&case, dx)
}

fn cfl_timestep_with(case: &ShockCase, dx: f64) -> Result<f64> {
    if !(dx > 0.0) {
        return Err(invalid(format!("dx must be positive, got {dx}")));
    }
    let sol = case.riemann()?;
    let c = match case.cfl_rule {
        CflRule::ExactWaveSpeed => sol.max_wave_speed(),
        CflRule::InitialCharacteristic => [sol.left, sol.right]
            .iter()
            .map(|s| s.u.abs() + s.sound_speed(GAMMA))
            .fold(0.0, f64::max),
    };
    Ok(case.cfl * dx / c)
}

/// Solver output in conserved variables `[ρ, ρu, ρv, E]` per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ShockTrajectory {
    pub case: ShockCase,
    pub grid: EulerGrid,
    pub dt: f64,
    pub frames: Vec<Vec<f64>>,
    /// Cumulative boundary inflow of each conserved total up to each frame.
    pub inflow: Vec<[f64; 4]>,
}

impl ShockTrajectory {
    /// Largest relative imbalance `|Q(t) − Q(0) − inflow(t)|` over frames and
    /// conserved variables, relative to `max(|Q(0)|, |Q(t)|, |inflow(t)|)`.
    pub fn conservation_error(&self) -> [f64; 4] {
        let q0 = totals(&self.grid, &self.frames[0]);
        let mut worst = [0.0f64; 4];
        for (f, b) in self.frames.iter().zip(&self.inflow) {
            let q = totals(&self.grid, f);
            for k in 0..4 {
                let scale = q0[k].abs().max(q[k].abs()).max(b[k].abs());
                if scale > 0.0 {
                    worst[k] = worst[k].max((q[k] - q0[k] - b[k]).abs() / scale);
                }
            }
        }
        worst
    }

    /// Mean absolute density error of the last frame against the exact
    /// solution, relative to `ρ_L`, over row 0 and excluding cells within
    /// `band` cells of the contact and of any shock.
    pub fn density_l1(&self, band: usize) -> Result<f64> {
        let sol = self.case.riemann()?;
        let last = self.frames.len() - 1;
        let t = self.time(last);
        let dx = self.case.dx();
        let x0 = self.case.x_diaphragm;
        let mut fronts = vec![x0 + sol.u_star * t];
        for w in [sol.left_wave, sol.right_wave] {
            if let Wave::Shock { speed } = w {
                fronts.push(x0 + speed * t);
            }
        }
        let mut err = 0.0;
        let mut count = 0;
        for i in 0..self.grid.nx {
            let x = (i as f64 + 0.5) * dx;
            if fronts.iter().any(|f| ((x - f) / dx).abs() < band as f64 + 0.5) {
                continue;
            }
            err += (self.frames[last][i * NVAR] - sol.sample(x - x0, t).rho).abs();
            count += 1;
        }
        if count == 0 {
            return Err(invalid("every cell lies inside an excluded band"));
        }
        Ok(err / count as f64 / self.case.rho_left)
    }

    /// Largest deviation of any cell from its row-0 value across all frames.
    pub fn y_nonuniformity(&self) -> f64 {
        let nx = self.grid.nx;
        let mut worst = 0.0f64;
        for f in &self.frames {
            for j in 1..self.grid.ny {
                for i in 0..nx * NVAR {
                    let a = f[i];
                    let b = f[j * nx * NVAR + i];
                    worst = worst.max((a - b).abs() / a.abs().max(1.0));
                }
            }
        }
        worst
    }

    pub fn time(&self, frame: usize) -> f64 {
        frame as f64 * self.dt
    }
}

/// Solver failure with every completed frame.
#[derive(Debug)]
pub struct ShockFailure {
    pub error: Error,
    pub partial: ShockTrajectory,
}

impl std::fmt::Display for ShockFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "shock solver stopped after {} frames: {}", self.partial.frames.len(), self.error)
    }
}

impl std::error::Error for ShockFailure {}

impl From<ShockFailure> for Error {
    fn from(f: ShockFailure) -> Self {
        f.error
    }
}

/// Diaphragm initial condition in conserved variables.
pub fn initial_state(case: &ShockCase) -> Result<Vec<f64>> {
    case.validate()?;
    let sol = case.riemann()?;
    let grid = case.grid();
    let conserved = |s: Primitive| primitive_to_conserved([s.rho, s.u, 0.0, s.p], GAMMA);
    let (ql, qr) = (conserved(sol.left), conserved(sol.right));
    let mut u = Vec::with_capacity(grid.n_cells() * NVAR);
    for _ in 0..grid.ny {
        for i in 0..grid.nx {
            let x = (i as f64 + 0.5) * grid.dx;
            u.extend(if x < case.x_diaphragm { ql } else { qr });
        }
    }
    Ok(u)
}

pub fn simulate_shock(case: &ShockCase) -> std::result::Result<ShockTrajectory, ShockFailure> {
    let grid = case.grid();
    let mut traj = ShockTrajectory {
        case: *case,
        grid,
        dt: 0.0,
        frames: Vec::new(),
        inflow: Vec::new(),
    };
    let start = initial_state(case).and_then(|u| Ok((u, case.dt()?)));
    let (u0, dt) = match start {
        Ok(v) => v,
        Err(error) => return Err(ShockFailure { error, partial: traj }),
    };
    traj.dt = dt;
    traj.frames.push(u0);
    traj.inflow.push([0.0; 4]);
    for _ in 1..case.n_frames {
        match rk4_step(&grid, traj.frames.last().unwrap(), dt) {
            Ok((next, b)) => {
                let prev = *traj.inflow.last().unwrap();
                traj.inflow.push(std::array::from_fn(|k| prev[k] + b[k]));
                traj.frames.push(next);
            }
            Err(error) => return Err(ShockFailure { error, partial: traj }),
        }
    }
    Ok(traj)
}

/// Exports a trajectory as a graph case with channels `[ρ, ρu_x, E]` on the
/// cell-center grid with diagonal edges.
pub fn trajectory_to_case(traj: &ShockTrajectory, id: &str, split: Option<Split>) -> Result<Case> {
    let c = &traj.case;
    let (mesh, edges) = make_regular_grid(c.n_cells, c.n_cells, c.extent, true)?;
    let channels: Vec<String> = SHOCK_CHANNELS.iter().map(|s| s.to_string()).collect();
    let frames = traj
        .frames
        .iter()
        .enumerate()
        .map(|(k, u)| {
            let values = u.chunks_exact(NVAR).flat_map(|q| [q[0], q[1], q[3]]).collect();
            StateField::new(values, channels.clone(), traj.time(k))
        })
        .collect::<Result<Vec<_>>>()?;
    let globals = GlobalParams::new([
        (P_LEFT_KEY.to_string(), c.p_left),
        (RHO_LEFT_KEY.to_string(), c.rho_left),
        (DT_KEY.to_string(), traj.dt),
    ])?;
    Ok(Case {
        id: id.to_string(),
        mesh,
        edges,
        frames,
        globals,
        split,
    })
}

pub fn generate_shock_case(case: &ShockCase, id: &str, split: Option<Split>) -> Result<Case> {
    let traj = simulate_shock(case)?;
    trajectory_to_case(&traj, id, split)
}

pub const N_PRESSURES: usize = 20;
pub const N_DENSITIES: usize = 25;

pub fn grid_pressure(i: usize) -> f64 {
    50_000.0 + 6_250.0 * i as f64
}

pub fn grid_density(m: usize) -> f64 {
    0.5 + 0.0625 * m as f64
}

/// One point of the left-state parameter grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub p_index: usize,
    pub rho_index: usize,
    pub p_left: f64,
    pub rho_left: f64,
}

impl GridPoint {
    pub fn id(&self) -> String {
        format!("shock_p{:02}_r{:02}", self.p_index, self.rho_index)
    }
}

/// All 20 × 25 grid points, pressure-major.
pub fn parameter_grid() -> Vec<GridPoint> {
    (0..N_PRESSURES)
        .flat_map(|i| {
            (0..N_DENSITIES).map(move |m| GridPoint {
                p_index: i,
                rho_index: m,
                p_left: grid_pressure(i),
                rho_left: grid_density(m),
            })
        })
        .collect()
}

pub const TEST_PRESSURE_INDICES: [usize; 7] = [0, 1, 15, 16, 17, 18, 19];
pub const N_TRAIN: usize = 400;
pub const N_VAL: usize = 25;
pub const N_TEST: usize = 75;

fn is_extreme_density(m: usize) -> bool {
    m <= 5 || m >= 19
}

/// Labels for the full grid (in [`parameter_grid`] order).
///
/// Test: the seven extreme pressures crossed with `ρ_L ≤ 0.8125` or
/// `ρ_L ≥ 1.6875`, keeping the 75 points farthest from the grid center
/// (the 9 nearest go to training). Validation: `p_L = 100000` at even
/// density indices, `p_L = 106250` at odd indices 1 to 21, and
/// `p_L = 112500` at the median density.
pub fn make_split(points: &[GridPoint]) -> Result<Vec<Split>> {
    let mut labels = vec![Split::Train; points.len()];
    let mut candidates: Vec<usize> = (0..points.len())
        .filter(|&k| {
            TEST_PRESSURE_INDICES.contains(&points[k].p_index) && is_extreme_density(points[k].rho_index)
        })
        .collect();
    let dist2 = |g: &GridPoint| {
        let u = (g.p_index as f64 - 9.5) / 9.5;
        let v = (g.rho_index as f64 - 12.0) / 12.0;
        u * u + v * v
    };
    candidates.sort_by(|&a, &b| {
        let (ga, gb) = (&points[a], &points[b]);
        dist2(ga)
            .total_cmp(&dist2(gb))
            .then(ga.p_index.cmp(&gb.p_index))
            .then(ga.rho_index.cmp(&gb.rho_index))
    });
    let drop = candidates.len().saturating_sub(N_TEST);
    for &k in &candidates[drop..] {
        labels[k] = Split::Test;
    }
    for (k, g) in points.iter().enumerate() {
        let val = match g.p_index {
            8 => g.rho_index % 2 == 0,
            9 => g.rho_index % 2 == 1 && g.rho_index <= 21,
            10 => g.rho_index == 12,
            _ => false,
        };
        if val {
            if labels[k] != Split::Train {
                return Err(Error::SplitConstruction(format!("{} is both test and validation", g.id())));
            }
            labels[k] = Split::Val;
        }
    }
    let count = |s: Split| labels.iter().filter(|&&l| l == s).count();
    let counts = (count(Split::Train), count(Split::Val), count(Split::Test));
    if counts != (N_TRAIN, N_VAL, N_TEST) {
        return Err(Error::SplitConstruction(format!(
            "split counts {counts:?} differ from ({N_TRAIN}, {N_VAL}, {N_TEST})"
        )));
    }
    Ok(labels)
}

/// A labeled subset of `n` grid points: about a quarter from the test
/// corners, an eighth from validation, the rest from training. Returned in
/// grid order.
pub fn sample_grid(n: usize, seed: u64) -> Result<Vec<(GridPoint, Split)>> {
    let points = parameter_grid();
    let labels = make_split(&points)?;
    if n == 0 || n > points.len() {
        return Err(invalid(format!("case count must be in 1..={}, got {n}", points.len())));
    }
    let n_test = (n / 4).max(1).min(n);
    let n_val = (n / 8).max(1).min(n - n_test);
    let quota = [(Split::Train, n - n_test - n_val), (Split::Val, n_val), (Split::Test, n_test)];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::with_capacity(n);
    for (split, count) in quota {
        let mut pool: Vec<usize> = (0..points.len()).filter(|&k| labels[k] == split).collect();
        pool.shuffle(&mut rng);
        chosen.extend_from_slice(&pool[..count]);
    }
    chosen.sort_unstable();
    Ok(chosen.into_iter().map(|k| (points[k], labels[k])).collect())
}

/// One manifest row.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseRow {
    pub id: String,
    pub p_left: f64,
    pub rho_left: f64,
    pub dt: f64,
    pub split: Split,
}

pub fn cases_csv(rows: &[CaseRow]) -> String {
    let mut out = String::from("case_id,p_left,rho_left,dt,split\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{:e},{}", r.id, r.p_left, r.rho_left, r.dt, r.split);
    }
    out
}

impl CaseRow {
    pub fn new(point: &GridPoint, split: Split, rule: CflRule) -> Result<Self> {
        let mut case = ShockCase::new(point.p_left, point.rho_left);
        case.cfl_rule = rule;
        Ok(Self {
            id: point.id(),
            p_left: point.p_left,
            rho_left: point.rho_left,
            dt: case.dt()?,
            split,
        })
    }
}

/// Manifest rows for the full labeled grid.
pub fn full_grid_rows(rule: CflRule) -> Result<Vec<CaseRow>> {
    let points = parameter_grid();
    let labels = make_split(&points)?;
    points
        .iter()
        .zip(labels)
        .map(|(g, split)| CaseRow::new(g, split, rule))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_shape() {
        let g = parameter_grid();
        assert_eq!(g.len(), 500);
        assert_eq!(g.last().unwrap().p_left, 168_750.0);
        assert_eq!(g.last().unwrap().rho_left, 2.0);
    }

    #[test]
    fn split_spot_checks() {
        let g = parameter_grid();
        let labels = make_split(&g).unwrap();
        let find = |p: f64, r: f64| labels[g.iter().position(|x| x.p_left == p && x.rho_left == r).unwrap()];
        assert_eq!(find(50_000.0, 0.5), Split::Test);
        assert_eq!(find(100_000.0, 1.0), Split::Val);
        assert_eq!(find(112_500.0, 1.25), Split::Val);
        assert_eq!(find(168_750.0, 2.0), Split::Test);
    }

    #[test]
    fn timestep_scaling() {
        let rule = CflRule::InitialCharacteristic;
        let a = cfl_timestep(1e5, 1.0, 0.01, rule).unwrap();
        let b = cfl_timestep(1e5, 1.0, 0.02, rule).unwrap();
        assert!((b - 2.0 * a).abs() < 1e-18);
        let c = cfl_timestep(4e5, 1.0, 0.01, rule).unwrap();
        assert!((c - 0.5 * a).abs() < 1e-18);
    }

    #[test]
    fn sample_covers_every_split() {
        let a = sample_grid(8, 1).unwrap();
        assert_eq!(a, sample_grid(8, 1).unwrap());
        let count = |s: Split| a.iter().filter(|(_, l)| *l == s).count();
        assert_eq!((count(Split::Train), count(Split::Val), count(Split::Test)), (5, 1, 2));
        assert!(a.windows(2).all(|w| w[0].0.id() < w[1].0.id()));
        assert_ne!(a, sample_grid(8, 2).unwrap());
        assert!(sample_grid(0, 1).is_err() && sample_grid(501, 1).is_err());
        assert_eq!(sample_grid(1, 0).unwrap()[0].1, Split::Test);
    }
}
