//! Finite-volume solver for the two-dimensional compressible Euler equations
//! on a uniform Cartesian grid.
//!
//! Conserved state per cell is `[ρ, ρu, ρv, E]`, cells ordered `j · nx + i`.
//! Face values of the primitives `[ρ, u, v, p]` come from the centered
//! four-point stencil `(−1, 7, 7, −1) / 12`. Where a smoothness sensor trips
//! the face falls back to van-Leer-limited MUSCL states. Fluxes are local
//! Lax–Friedrichs.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::simulate::{axpy_stages, Integrator};

pub const GAMMA: f64 = 1.4;
pub const NVAR: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum XBoundary {
    /// Zero-gradient ghost cells.
    Transmissive,
    Periodic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EulerGrid {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
    pub gamma: f64,
    pub x_boundary: XBoundary,
    pub limiter: bool,
}

impl EulerGrid {
    /// Square domain of side `extent`, transmissive in x, periodic in y.
    pub fn square(n: usize, extent: f64) -> Self {
        Self {
            nx: n,
            ny: n,
            dx: extent / n as f64,
            dy: extent / n as f64,
            gamma: GAMMA,
            x_boundary: XBoundary::Transmissive,
            limiter: true,
        }
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    fn validate(&self, u: &[f64]) -> Result<()> {
        if self.nx < 4 || self.ny < 1 {
            return Err(invalid("the face stencil needs at least 4 cells in x"));
        }
        if u.len() != self.n_cells() * NVAR {
            return Err(invalid(format!(
                "state has {} values, expected {}",
                u.len(),
                self.n_cells() * NVAR
            )));
        }
        Ok(())
    }
}

pub fn primitive_to_conserved(w: [f64; 4], gamma: f64) -> [f64; 4] {
    let [rho, u, v, p] = w;
    [rho, rho * u, rho * v, p / (gamma - 1.0) + 0.5 * rho * (u * u + v * v)]
}

/// Primitives of one cell; `None` when density or pressure is not positive.
pub fn conserved_to_primitive(q: &[f64], gamma: f64) -> Option<[f64; 4]> {
    let rho = q[0];
    if !(rho > 0.0) {
        return None;
    }
    let u = q[1] / rho;
    let v = q[2] / rho;
    let p = (gamma - 1.0) * (q[3] - 0.5 * rho * (u * u + v * v));
    (p > 0.0 && p.is_finite()).then_some([rho, u, v, p])
}

fn primitives(grid: &EulerGrid, u: &[f64]) -> Result<Vec<[f64; 4]>> {
    u.chunks_exact(NVAR)
        .enumerate()
        .map(|(cell, q)| conserved_to_primitive(q, grid.gamma).ok_or(Error::Positivity { cell }))
        .collect()
}

/// Flux along the direction whose velocity sits at index `k` of `w`.
fn physical_flux(w: &[f64; 4], k: usize, gamma: f64) -> [f64; 4] {
    let [rho, u, v, p] = *w;
    let un = w[k];
    let e = p / (gamma - 1.0) + 0.5 * rho * (u * u + v * v);
    [
        rho * un,
        rho * u * un + if k == 1 { p } else { 0.0 },
        rho * v * un + if k == 2 { p } else { 0.0 },
        un * (e + p),
    ]
}

fn van_leer(a: f64, b: f64) -> f64 {
    if a * b > 0.0 {
        2.0 * a * b / (a + b)
    } else {
        0.0
    }
}

/// Left and right face states from the four cells around a face.
fn reconstruct(c: [&[f64; 4]; 4], limiter: bool) -> ([f64; 4], [f64; 4]) {
    let [l2, l1, r1, r2] = c;
    let mut smooth = [0.0; 4];
    let mut trip = false;
    for q in 0..4 {
        let f = (-l2[q] + 7.0 * l1[q] + 7.0 * r1[q] - r2[q]) / 12.0;
        smooth[q] = f;
        if limiter {
            let (lo, hi) = (l1[q].min(r1[q]), l1[q].max(r1[q]));
            let jump = (r1[q] - l1[q]).abs();
            let side = (l1[q] - l2[q]).abs().max((r2[q] - r1[q]).abs());
            let floor = 1e-8 * (l1[q].abs() + r1[q].abs());
            if f < lo || f > hi || (jump > 4.0 * side && jump > floor) {
                trip = true;
            }
        }
    }
    if !(smooth[0] > 0.0 && smooth[3] > 0.0) {
        trip = true;
    }
    if !trip {
        return (smooth, smooth);
    }
    let mut wl = [0.0; 4];
    let mut wr = [0.0; 4];
    for q in 0..4 {
        wl[q] = l1[q] + 0.5 * van_leer(l1[q] - l2[q], r1[q] - l1[q]);
        wr[q] = r1[q] - 0.5 * van_leer(r1[q] - l1[q], r2[q] - r1[q]);
    }
    (wl, wr)
}

fn llf_flux(wl: &[f64; 4], wr: &[f64; 4], k: usize, gamma: f64) -> [f64; 4] {
    let fl = physical_flux(wl, k, gamma);
    let fr = physical_flux(wr, k, gamma);
    if wl == wr {
        return fl;
    }
    let al = (gamma * wl[3] / wl[0]).sqrt() + wl[k].abs();
    let ar = (gamma * wr[3] / wr[0]).sqrt() + wr[k].abs();
    let alpha = al.max(ar);
    let ul = primitive_to_conserved(*wl, gamma);
    let ur = primitive_to_conserved(*wr, gamma);
    std::array::from_fn(|q| 0.5 * (fl[q] + fr[q]) - 0.5 * alpha * (ur[q] - ul[q]))
}

/// Fluxes at the `n + 1` faces of a line of `n` cells given two ghost cells
/// on each side (`line.len() == n + 4`).
fn line_fluxes(line: &[[f64; 4]], k: usize, grid: &EulerGrid, out: &mut Vec<[f64; 4]>) {
    out.clear();
    let n = line.len() - 4;
    for f in 0..=n {
        let (wl, wr) = reconstruct([&line[f], &line[f + 1], &line[f + 2], &line[f + 3]], grid.limiter);
        out.push(llf_flux(&wl, &wr, k, grid.gamma));
    }
}

/// Semi-discrete right-hand side.
///
/// Returns `dU/dt` and the net rate at which each conserved total
/// `Σ U ΔxΔy` flows in through the domain boundary.
pub fn fvm_rhs(grid: &EulerGrid, u: &[f64]) -> Result<(Vec<f64>, [f64; 4])> {
    grid.validate(u)?;
    let w = primitives(grid, u)?;
    let (nx, ny) = (grid.nx, grid.ny);
    let mut du = vec![0.0; u.len()];
    let mut inflow = [0.0; 4];
    let mut line = Vec::with_capacity(nx.max(ny) + 4);
    let mut flux = Vec::with_capacity(nx.max(ny) + 1);
    for j in 0..ny {
        line.clear();
        let row = &w[j * nx..(j + 1) * nx];
        match grid.x_boundary {
            XBoundary::Transmissive => {
                line.extend([row[0], row[0]]);
                line.extend_from_slice(row);
                line.extend([row[nx - 1], row[nx - 1]]);
            }
            XBoundary::Periodic => {
                line.extend([row[nx - 2], row[nx - 1]]);
                line.extend_from_slice(row);
                line.extend([row[0], row[1]]);
            }
        }
        line_fluxes(&line, 1, grid, &mut flux);
        for i in 0..nx {
            let d = &mut du[(j * nx + i) * NVAR..(j * nx + i + 1) * NVAR];
            for q in 0..NVAR {
                d[q] -= (flux[i + 1][q] - flux[i][q]) / grid.dx;
            }
        }
        for q in 0..NVAR {
            inflow[q] += (flux[0][q] - flux[nx][q]) * grid.dy;
        }
    }
    if ny >= 2 {
        for i in 0..nx {
            line.clear();
            let at = |j: usize| w[j * nx + i];
            line.extend([at((2 * ny - 2) % ny), at(ny - 1)]);
            line.extend((0..ny).map(at));
            line.extend([at(0), at(1 % ny)]);
            line_fluxes(&line, 2, grid, &mut flux);
            for j in 0..ny {
                let d = &mut du[(j * nx + i) * NVAR..(j * nx + i + 1) * NVAR];
                for q in 0..NVAR {
                    d[q] -= (flux[j + 1][q] - flux[j][q]) / grid.dy;
                }
            }
        }
    }
    Ok((du, inflow))
}

/// One classical RK4 step. Returns the new state and the boundary inflow
/// integrated over the step with the same stage weights.
pub fn rk4_step(grid: &EulerGrid, u: &[f64], dt: f64) -> Result<(Vec<f64>, [f64; 4])> {
    let tab = Integrator::Rk4.tableau();
    let mut stages = Vec::with_capacity(4);
    let mut inflow = [0.0; 4];
    for i in 0..tab.stages() {
        let y = axpy_stages(u, dt, tab.a[i], &stages);
        let (k, b) = fvm_rhs(grid, &y)?;
        for q in 0..NVAR {
            inflow[q] += dt * tab.b[i] * b[q];
        }
        stages.push(k);
    }
    let next = axpy_stages(u, dt, tab.b, &stages);
    if let Some(cell) = next
        .chunks_exact(NVAR)
        .position(|q| conserved_to_primitive(q, grid.gamma).is_none())
    {
        return Err(Error::Positivity { cell });
    }
    Ok((next, inflow))
}

/// `Σ U ΔxΔy` per conserved variable.
pub fn totals(grid: &EulerGrid, u: &[f64]) -> [f64; 4] {
    let mut t = [0.0; 4];
    for q in u.chunks_exact(NVAR) {
        for k in 0..NVAR {
            t[k] += q[k];
        }
    }
    t.map(|v| v * grid.dx * grid.dy)
}
