//! Moving-least-squares gradient and Laplacian operators on graphs.
//!
//! Both operators are assembled from edge displacements alone and applied as
//! weighted sums of neighbor differences:
//!
//! * gradient: `∇s_i = M_i⁻¹ Σ_j δr_ij (s_j − s_i)` with `M_i = Σ_j δr_ij δr_ijᵀ`
//! * Laplacian: `∇²s_i = Σ_j w_ij (s_j − s_i)` with `w_ij = Lᵀ M̃_i⁻¹ H_ij`,
//!   `H_ij = [δx, δy, δx², δy², δx δy]` and `L = [0, 0, 2, 2, 0]`.
//!
//! Degenerate neighborhoods are not rejected. When a moment matrix is singular
//! or its condition number exceeds [`MlsOptions::condition_limit`], the
//! inverse is taken of `M + εI` with `ε = tikhonov · trace(M)` and the node is
//! flagged.

use std::fmt::Write as _;

use nalgebra::{Matrix5, SymmetricEigen, Vector5};

use crate::error::{invalid, Error, Result};
use crate::field::StateField;
use crate::mesh::{build_neighborhoods, positions_fingerprint, EdgeSet, Mesh, Neighborhood, Point};

/// `∇²` applied to the quadratic basis `[x, y, x², y², xy]`.
pub const LAPLACIAN_OF_BASIS: [f64; 5] = [0.0, 0.0, 2.0, 2.0, 0.0];

/// Fewest neighbors for which a Laplacian is assembled at all.
pub const MIN_LAPLACIAN_NEIGHBORS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MlsOptions {
    /// Gaussian distance weight `exp(-|δr|² / (σ ℓ_i)²)` where `ℓ_i` is the
    /// RMS edge length at node `i`. `None` gives the unweighted fit.
    pub gaussian_width: Option<f64>,
    pub condition_limit: f64,
    pub tikhonov: f64,
}

impl Default for MlsOptions {
    fn default() -> Self {
        Self {
            gaussian_width: None,
            condition_limit: 1e12,
            tikhonov: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientStencil {
    /// Row-major inverse moment matrices, one per node.
    inverse: Vec<[f64; 4]>,
    /// Eigenvalue ratio of each moment matrix (infinite when singular).
    condition: Vec<f64>,
    flagged: Vec<bool>,
    /// Per-slot fit weights; `None` for the unweighted fit.
    slot_weights: Option<Vec<f64>>,
    fingerprint: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianStencil {
    /// One weight per directed edge, in edge-set order.
    weights: Vec<f64>,
    condition: Vec<f64>,
    flagged: Vec<bool>,
    fingerprint: u64,
}

fn rms_length(disp: &[Point]) -> f64 {
    let s: f64 = disp.iter().map(|d| d[0] * d[0] + d[1] * d[1]).sum();
    (s / disp.len() as f64).sqrt()
}

fn slot_weights(nbr: &Neighborhood, width: f64) -> Vec<f64> {
    let mut w = vec![0.0; nbr.n_slots()];
    for i in 0..nbr.n_nodes() {
        let disp = nbr.displacements_of(i);
        let sigma = width * rms_length(disp);
        for (s, d) in nbr.range(i).zip(disp) {
            w[s] = (-(d[0] * d[0] + d[1] * d[1]) / (sigma * sigma)).exp();
        }
    }
    w
}

fn sym2_condition(a: f64, b: f64, c: f64) -> f64 {
    let mean = 0.5 * (a + c);
    let r = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let hi = mean + r;
    let lo = mean - r;
    if lo <= 0.0 || !lo.is_finite() {
        f64::INFINITY
    } else {
        hi / lo
    }
}

pub fn assemble_gradient(nbr: &Neighborhood, opts: &MlsOptions) -> Result<GradientStencil> {
    let n = nbr.n_nodes();
    let weights = opts.gaussian_width.map(|w| slot_weights(nbr, w));
    let mut inverse = Vec::with_capacity(n);
    let mut condition = Vec::with_capacity(n);
    let mut flagged = Vec::with_capacity(n);
    for i in 0..n {
        let deg = nbr.degree(i);
        if deg < 2 {
            return Err(Error::UnderdeterminedGradient {
                node: i,
                count: deg,
            });
        }
        let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
        for (s, d) in nbr.range(i).zip(nbr.displacements_of(i)) {
            let w = weights.as_ref().map_or(1.0, |w| w[s]);
            a += w * d[0] * d[0];
            b += w * d[0] * d[1];
            c += w * d[1] * d[1];
        }
        let cond = sym2_condition(a, b, c);
        let regularize = !(cond <= opts.condition_limit);
        if regularize {
            let eps = opts.tikhonov * (a + c);
            a += eps;
            c += eps;
        }
        let det = a * c - b * b;
        inverse.push([c / det, -b / det, -b / det, a / det]);
        condition.push(cond);
        flagged.push(regularize);
    }
    Ok(GradientStencil {
        inverse,
        condition,
        flagged,
        slot_weights: weights,
        fingerprint: nbr.fingerprint(),
    })
}

impl GradientStencil {
    pub fn inverse(&self, node: usize) -> [f64; 4] {
        self.inverse[node]
    }

    pub fn condition(&self) -> &[f64] {
        &self.condition
    }

    pub fn flagged(&self) -> &[bool] {
        &self.flagged
    }

    pub fn flagged_nodes(&self) -> Vec<usize> {
        flagged_indices(&self.flagged)
    }

    fn check(&self, nbr: &Neighborhood) -> Result<()> {
        if self.fingerprint != nbr.fingerprint() {
            return Err(Error::StaleOperator);
        }
        Ok(())
    }

    /// Per-slot coefficient vectors `c_ij` with `∇s_i = Σ_j c_ij (s_j − s_i)`.
    pub fn coefficients(&self, nbr: &Neighborhood) -> Result<Vec<Point>> {
        self.check(nbr)?;
        let mut out = vec![[0.0; 2]; nbr.n_slots()];
        for i in 0..nbr.n_nodes() {
            let m = self.inverse[i];
            for (s, d) in nbr.range(i).zip(nbr.displacements_of(i)) {
                let w = self.slot_weights.as_ref().map_or(1.0, |w| w[s]);
                out[s] = [
                    w * (m[0] * d[0] + m[1] * d[1]),
                    w * (m[2] * d[0] + m[3] * d[1]),
                ];
            }
        }
        Ok(out)
    }

    /// Gradient of node-major `values` with `n_channels` per node.
    ///
    /// Output is node-major with `[∂x, ∂y]` per channel.
    pub fn apply_raw(&self, nbr: &Neighborhood, values: &[f64], n_channels: usize) -> Result<Vec<f64>> {
        self.check(nbr)?;
        let n = nbr.n_nodes();
        check_len(values, n, n_channels)?;
        let mut out = vec![0.0; n * n_channels * 2];
        let mut g = vec![0.0; n_channels * 2];
        for i in 0..n {
            g.iter_mut().for_each(|v| *v = 0.0);
            let si = &values[i * n_channels..(i + 1) * n_channels];
            for s in nbr.range(i) {
                let j = nbr.neighbors()[s];
                let d = nbr.displacements()[s];
                let w = self.slot_weights.as_ref().map_or(1.0, |w| w[s]);
                let sj = &values[j * n_channels..(j + 1) * n_channels];
                for c in 0..n_channels {
                    let ds = w * (sj[c] - si[c]);
                    g[2 * c] += d[0] * ds;
                    g[2 * c + 1] += d[1] * ds;
                }
            }
            let m = self.inverse[i];
            let o = &mut out[i * n_channels * 2..(i + 1) * n_channels * 2];
            for c in 0..n_channels {
                o[2 * c] = m[0] * g[2 * c] + m[1] * g[2 * c + 1];
                o[2 * c + 1] = m[2] * g[2 * c] + m[3] * g[2 * c + 1];
            }
        }
        Ok(out)
    }

    /// Adds `Gᵀ upstream` into `grad_values`, where `G` is the linear map of
    /// [`apply_raw`](Self::apply_raw).
    pub fn adjoint_accumulate(
        &self,
        nbr: &Neighborhood,
        upstream: &[f64],
        n_channels: usize,
        grad_values: &mut [f64],
    ) -> Result<()> {
        self.check(nbr)?;
        let n = nbr.n_nodes();
        check_len(grad_values, n, n_channels)?;
        if upstream.len() != n * n_channels * 2 {
            return Err(invalid("gradient adjoint: upstream has the wrong length"));
        }
        let mut v = vec![0.0; n_channels * 2];
        for i in 0..n {
            let m = self.inverse[i];
            let u = &upstream[i * n_channels * 2..(i + 1) * n_channels * 2];
            // M⁻¹ is symmetric up to rounding; use its transpose explicitly
            for c in 0..n_channels {
                v[2 * c] = m[0] * u[2 * c] + m[2] * u[2 * c + 1];
                v[2 * c + 1] = m[1] * u[2 * c] + m[3] * u[2 * c + 1];
            }
            for s in nbr.range(i) {
                let j = nbr.neighbors()[s];
                let d = nbr.displacements()[s];
                let w = self.slot_weights.as_ref().map_or(1.0, |w| w[s]);
                for c in 0..n_channels {
                    let t = w * (d[0] * v[2 * c] + d[1] * v[2 * c + 1]);
                    grad_values[j * n_channels + c] += t;
                    grad_values[i * n_channels + c] -= t;
                }
            }
        }
        Ok(())
    }
}

fn flagged_indices(flags: &[bool]) -> Vec<usize> {
    flags
        .iter()
        .enumerate()
        .filter_map(|(i, &f)| f.then_some(i))
        .collect()
}

fn check_len(values: &[f64], n: usize, n_channels: usize) -> Result<()> {
    if values.len() != n * n_channels {
        return Err(invalid(format!(
            "field has {} values, expected {} nodes × {} channels",
            values.len(),
            n,
            n_channels
        )));
    }
    Ok(())
}

/// Eigenvalue ratio of a symmetric positive semi-definite matrix.
fn sym5_condition(m: &Matrix5<f64>) -> f64 {
    let eig = SymmetricEigen::new(*m).eigenvalues;
    let hi = eig.max();
    let lo = eig.min();
    if lo <= 0.0 || !lo.is_finite() {
        f64::INFINITY
    } else {
        hi / lo
    }
}

pub fn assemble_laplacian(nbr: &Neighborhood, opts: &MlsOptions) -> Result<LaplacianStencil> {
    let n = nbr.n_nodes();
    let fit_weights = opts.gaussian_width.map(|w| slot_weights(nbr, w));
    let n_edges = nbr.edge_ids().iter().max().map_or(0, |m| m + 1);
    let mut weights = vec![0.0; n_edges.max(nbr.n_slots())];
    weights.truncate(n_edges);
    let mut condition = Vec::with_capacity(n);
    let mut flagged = Vec::with_capacity(n);
    let target = Vector5::from(LAPLACIAN_OF_BASIS);
    for i in 0..n {
        let deg = nbr.degree(i);
        if deg < MIN_LAPLACIAN_NEIGHBORS {
            return Err(Error::UnderdeterminedLaplacian {
                node: i,
                count: deg,
                min: MIN_LAPLACIAN_NEIGHBORS,
            });
        }
        // fit in units of the local RMS edge length so conditioning and the
        // Tikhonov shift do not depend on the mesh scale
        let disp = nbr.displacements_of(i);
        let ell = rms_length(disp);
        let basis = |d: &Point| {
            let x = d[0] / ell;
            let y = d[1] / ell;
            Vector5::new(x, y, x * x, y * y, x * y)
        };
        let mut moment = Matrix5::<f64>::zeros();
        for (s, d) in nbr.range(i).zip(disp) {
            let h = basis(d);
            let w = fit_weights.as_ref().map_or(1.0, |w| w[s]);
            moment += (w * h) * h.transpose();
        }
        let cond = sym5_condition(&moment);
        let regularize = !(cond <= opts.condition_limit);
        if regularize {
            let eps = opts.tikhonov * moment.trace();
            for k in 0..5 {
                moment[(k, k)] += eps;
            }
        }
        let v = match moment.cholesky() {
            Some(ch) => ch.solve(&target),
            None => moment
                .lu()
                .solve(&target)
                .ok_or(Error::UnderdeterminedLaplacian {
                    node: i,
                    count: deg,
                    min: MIN_LAPLACIAN_NEIGHBORS,
                })?,
        };
        let inv_ell2 = 1.0 / (ell * ell);
        for (s, d) in nbr.range(i).zip(disp) {
            let w = fit_weights.as_ref().map_or(1.0, |w| w[s]);
            weights[nbr.edge_ids()[s]] = w * v.dot(&basis(d)) * inv_ell2;
        }
        condition.push(cond);
        flagged.push(regularize);
    }
    Ok(LaplacianStencil {
        weights,
        condition,
        flagged,
        fingerprint: nbr.fingerprint(),
    })
}

impl LaplacianStencil {
    /// Edge-aligned weights `w_ij`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn condition(&self) -> &[f64] {
        &self.condition
    }

    pub fn flagged(&self) -> &[bool] {
        &self.flagged
    }

    pub fn flagged_nodes(&self) -> Vec<usize> {
        flagged_indices(&self.flagged)
    }

    fn check(&self, nbr: &Neighborhood) -> Result<()> {
        if self.fingerprint != nbr.fingerprint() {
            return Err(Error::StaleOperator);
        }
        Ok(())
    }

    pub fn apply_raw(&self, nbr: &Neighborhood, values: &[f64], n_channels: usize) -> Result<Vec<f64>> {
        self.check(nbr)?;
        let n = nbr.n_nodes();
        check_len(values, n, n_channels)?;
        let mut out = vec![0.0; n * n_channels];
        for i in 0..n {
            let si = &values[i * n_channels..(i + 1) * n_channels];
            let o = &mut out[i * n_channels..(i + 1) * n_channels];
            for s in nbr.range(i) {
                let j = nbr.neighbors()[s];
                let w = self.weights[nbr.edge_ids()[s]];
                let sj = &values[j * n_channels..(j + 1) * n_channels];
                for c in 0..n_channels {
                    o[c] += w * (sj[c] - si[c]);
                }
            }
        }
        Ok(out)
    }

    pub fn adjoint_accumulate(
        &self,
        nbr: &Neighborhood,
        upstream: &[f64],
        n_channels: usize,
        grad_values: &mut [f64],
    ) -> Result<()> {
        self.check(nbr)?;
        let n = nbr.n_nodes();
        check_len(grad_values, n, n_channels)?;
        check_len(upstream, n, n_channels)?;
        for i in 0..n {
            let u = &upstream[i * n_channels..(i + 1) * n_channels];
            for s in nbr.range(i) {
                let j = nbr.neighbors()[s];
                let w = self.weights[nbr.edge_ids()[s]];
                for c in 0..n_channels {
                    let t = w * u[c];
                    grad_values[j * n_channels + c] += t;
                    grad_values[i * n_channels + c] -= t;
                }
            }
        }
        Ok(())
    }
}

/// Gradient of a field; returns node-major `[∂x, ∂y]` pairs per channel.
pub fn apply_gradient(st: &GradientStencil, nbr: &Neighborhood, s: &StateField) -> Result<Vec<f64>> {
    st.apply_raw(nbr, s.values(), s.n_channels())
}

/// Laplacian of a field; returns node-major values per channel.
pub fn apply_laplacian(st: &LaplacianStencil, nbr: &Neighborhood, s: &StateField) -> Result<Vec<f64>> {
    st.apply_raw(nbr, s.values(), s.n_channels())
}

/// Gradient and Laplacian stencils for one mesh configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct MlsOperatorSet {
    pub gradient: GradientStencil,
    pub laplacian: LaplacianStencil,
    pub neighborhood: Neighborhood,
    options: MlsOptions,
    positions_fingerprint: u64,
}

impl MlsOperatorSet {
    pub fn build(mesh: &Mesh, edges: &EdgeSet, options: MlsOptions) -> Result<Self> {
        let nbr = build_neighborhoods(mesh, edges)?;
        Self::from_neighborhood(nbr, mesh.fingerprint(), options)
    }

    fn from_neighborhood(nbr: Neighborhood, positions_fingerprint: u64, options: MlsOptions) -> Result<Self> {
        Ok(Self {
            gradient: assemble_gradient(&nbr, &options)?,
            laplacian: assemble_laplacian(&nbr, &options)?,
            neighborhood: nbr,
            options,
            positions_fingerprint,
        })
    }

    pub fn options(&self) -> &MlsOptions {
        &self.options
    }

    pub fn n_nodes(&self) -> usize {
        self.neighborhood.n_nodes()
    }

    /// Errors unless this set was built from exactly `positions`.
    pub fn ensure_fresh(&self, positions: &[Point]) -> Result<()> {
        if positions_fingerprint(positions) != self.positions_fingerprint {
            return Err(Error::StaleOperator);
        }
        Ok(())
    }

    /// Same topology, stencils rebuilt for new node positions.
    pub fn rebuild_for_positions(&self, new_positions: &[Point]) -> Result<Self> {
        if new_positions.len() != self.n_nodes() {
            return Err(invalid(format!(
                "expected {} positions, got {}",
                self.n_nodes(),
                new_positions.len()
            )));
        }
        let nbr = self.neighborhood.with_positions(new_positions)?;
        Self::from_neighborhood(nbr, positions_fingerprint(new_positions), self.options)
    }

    pub fn gradient(&self, values: &[f64], n_channels: usize) -> Result<Vec<f64>> {
        self.gradient.apply_raw(&self.neighborhood, values, n_channels)
    }

    pub fn laplacian(&self, values: &[f64], n_channels: usize) -> Result<Vec<f64>> {
        self.laplacian.apply_raw(&self.neighborhood, values, n_channels)
    }

    /// Nodes flagged by either stencil.
    pub fn flagged_nodes(&self) -> Vec<usize> {
        (0..self.n_nodes())
            .filter(|&i| self.gradient.flagged[i] || self.laplacian.flagged[i])
            .collect()
    }

    /// Text dump for cross-implementation comparison.
    ///
    /// One `node` line per node followed by one `nbr` line per neighbor:
    ///
    /// ```text
    /// node <i> minv <m00> <m01> <m10> <m11> gcond <c> lcond <c> flags <g><l>
    /// nbr <j> w <w_ij>
    /// ```
    pub fn dump(&self) -> String {
        let nbr = &self.neighborhood;
        let mut out = String::new();
        for i in 0..self.n_nodes() {
            let m = self.gradient.inverse[i];
            let _ = writeln!(
                out,
                "node {i} minv {:?} {:?} {:?} {:?} gcond {:?} lcond {:?} flags {}{}",
                m[0],
                m[1],
                m[2],
                m[3],
                self.gradient.condition[i],
                self.laplacian.condition[i],
                self.gradient.flagged[i] as u8,
                self.laplacian.flagged[i] as u8
            );
            for s in nbr.range(i) {
                let _ = writeln!(
                    out,
                    "nbr {} w {:?}",
                    nbr.neighbors()[s],
                    self.laplacian.weights[nbr.edge_ids()[s]]
                );
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{make_perturbed_mesh, make_regular_grid, PerturbedMeshSpec};

    fn field(mesh: &Mesh, f: impl Fn(f64, f64) -> f64) -> StateField {
        let v = mesh.positions().iter().map(|p| f(p[0], p[1])).collect();
        StateField::new(v, vec!["s".into()], 0.0).unwrap()
    }

    fn irregular(seed: u64) -> (Mesh, EdgeSet) {
        make_perturbed_mesh(&PerturbedMeshSpec::default(), seed).unwrap()
    }

    #[test]
    fn uniform_four_stencil_moment() {
        let (mesh, edges) = make_regular_grid(5, 5, 1.0, false).unwrap();
        let nbr = build_neighborhoods(&mesh, &edges).unwrap();
        let st = assemble_gradient(&nbr, &MlsOptions::default()).unwrap();
        let h: f64 = 0.2;
        let m = st.inverse(12);
        let expect = 1.0 / (2.0 * h * h);
        assert!((m[0] - expect).abs() < 1e-12 * expect);
        assert!((m[3] - expect).abs() < 1e-12 * expect);
        assert!(m[1].abs() < 1e-12 && m[2].abs() < 1e-12);
        assert!(!st.flagged()[12]);
    }

    #[test]
    fn collinear_neighbors_are_flagged_and_regularized() {
        let mesh = Mesh::new(vec![[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [2.0, 0.0]]).unwrap();
        let edges = EdgeSet::new(
            vec![(0, 1), (0, 2), (0, 3), (1, 0), (1, 3), (2, 0), (2, 1), (3, 1), (3, 0)],
            false,
            4,
        )
        .unwrap();
        let nbr = build_neighborhoods(&mesh, &edges).unwrap();
        let st = assemble_gradient(&nbr, &MlsOptions::default()).unwrap();
        assert_eq!(st.flagged_nodes(), vec![0, 1, 2, 3]);
        assert!(st.inverse(0).iter().all(|v| v.is_finite()));
        let s = field(&mesh, |x, _| 3.0 * x);
        let g = apply_gradient(&st, &nbr, &s).unwrap();
        assert!((g[0] - 3.0).abs() < 1e-9, "{g:?}");
        assert!(g[1].abs() < 1e-9);
    }

    #[test]
    fn irregular_inverse_is_accurate() {
        let (mesh, edges) = irregular(4);
        let nbr = build_neighborhoods(&mesh, &edges).unwrap();
        let st = assemble_gradient(&nbr, &MlsOptions::default()).unwrap();
        for i in 0..nbr.n_nodes() {
            let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
            for d in nbr.displacements_of(i) {
                a += d[0] * d[0];
                b += d[0] * d[1];
                c += d[1] * d[1];
            }
            let m = st.inverse(i);
            let p = [a * m[0] + b * m[2], a * m[1] + b * m[3], b * m[0] + c * m[2], b * m[1] + c * m[3]];
            for (k, want) in [1.0, 0.0, 0.0, 1.0].iter().enumerate() {
                assert!((p[k] - want).abs() < 1e-10, "node {i}: {p:?}");
            }
        }
    }

    #[test]
    fn constant_field_has_zero_derivatives() {
        let (mesh, edges) = irregular(1);
        let ops = MlsOperatorSet::build(&mesh, &edges, MlsOptions::default()).unwrap();
        let s = field(&mesh, |_, _| 7.25);
        assert!(ops.gradient(s.values(), 1).unwrap().iter().all(|&v| v == 0.0));
        assert!(ops.laplacian(s.values(), 1).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn affine_field_gradient_exact() {
        let (mesh, edges) = irregular(2);
        let ops = MlsOperatorSet::build(&mesh, &edges, MlsOptions::default()).unwrap();
        let s = field(&mesh, |x, y| 2.0 * x + 3.0 * y - 1.0);
        let g = ops.gradient(s.values(), 1).unwrap();
        for pair in g.chunks(2) {
            assert!((pair[0] - 2.0).abs() < 1e-9 && (pair[1] - 3.0).abs() < 1e-9);
        }
    }

    #[test]
    fn grid_interior_gradient_of_x() {
        let (mesh, edges) = make_regular_grid(64, 64, 0.5, false).unwrap();
        let nbr = build_neighborhoods(&mesh, &edges).unwrap();
        let st = assemble_gradient(&nbr, &MlsOptions::default()).unwrap();
        let s = field(&mesh, |x, _| x);
        let g = apply_gradient(&st, &nbr, &s).unwrap();
        for j in 1..63 {
            for i in 1..63 {
                let k = j * 64 + i;
                assert!((g[2 * k] - 1.0).abs() < 1e-10);
                assert!(g[2 * k + 1].abs() < 1e-10);
            }
        }
    }

    #[test]
    fn eight_neighbor_grid_laplacian_of_r2() {
        let (mesh, edges) = make_regular_grid(9, 9, 1.0, true).unwrap();
        let ops = MlsOperatorSet::build(&mesh, &edges, MlsOptions::default()).unwrap();
        let s = field(&mesh, |x, y| x * x + y * y);
        let l = ops.laplacian(s.values(), 1).unwrap();
        for j in 1..8 {
            for i in 1..8 {
                let k = j * 9 + i;
                assert!(!ops.laplacian.flagged()[k]);
                assert!((l[k] - 4.0).abs() < 1e-8, "{}", l[k]);
            }
        }
    }

    #[test]
    fn four_neighbor_grid_takes_regularized_path() {
        let (mesh, edges) = make_regular_grid(10, 10, 1.0, false).unwrap();
        // corners get one diagonal so every node has the three neighbors assembly needs
        let mut list = edges.edges().to_vec();
        list.extend([(0, 11), (11, 0), (9, 18), (18, 9), (90, 81), (81, 90), (99, 88), (88, 99)]);
        let edges = EdgeSet::new(list, true, 100).unwrap();
        let ops = MlsOperatorSet::build(&mesh, &edges, MlsOptions::default()).unwrap();
        let s = field(&mesh, |x, y| x * x + y * y);
        let l = ops.laplacian(s.values(), 1).unwrap();
        let k = 5 * 10 + 5;
        assert!(ops.laplacian.flagged()[k]);
        assert!((l[k] - 4.0).abs() < 1e-6, "{}", l[k]);
    }

    #[test]
    fn laplacian_needs_three_neighbors() {
        let (mesh, edges) = make_regular_grid(3, 3, 1.0, false).unwrap();
        let nbr = build_neighborhoods(&mesh, &edges).unwrap();
        assert!(matches!(
            assemble_laplacian(&nbr, &MlsOptions::default()),
            Err(Error::UnderdeterminedLaplacian { node: 0, count: 2, .. })
        ));
    }

    #[test]
    fn stale_operator_detected() {
        let (mesh, edges) = irregular(3);
        let ops = MlsOperatorSet::build(&mesh, &edges, MlsOptions::default()).unwrap();
        let mut moved = mesh.positions().to_vec();
        moved[10][0] += 1e-3;
        assert!(matches!(ops.ensure_fresh(&moved), Err(Error::StaleOperator)));
        assert!(ops.ensure_fresh(mesh.positions()).is_ok());
        let other = ops.neighborhood.with_positions(&moved).unwrap();
        let s = field(&mesh, |x, _| x);
        assert!(matches!(
            apply_gradient(&ops.gradient, &other, &s),
            Err(Error::StaleOperator)
        ));
        assert!(matches!(
            apply_laplacian(&ops.laplacian, &other, &s),
            Err(Error::StaleOperator)
        ));
    }

    #[test]
    fn rebuild_with_same_positions_is_bit_identical() {
        let (mesh, edges) = irregular(5);
        let ops = MlsOperatorSet::build(&mesh, &edges, MlsOptions::default()).unwrap();
        let again = ops.rebuild_for_positions(mesh.positions()).unwrap();
        assert_eq!(ops, again);
        assert!(ops.rebuild_for_positions(&mesh.positions()[1..]).is_err());
    }

    #[test]
    fn adjoints_match_transposed_application() {
        let (mesh, edges) = irregular(6);
        let ops = MlsOperatorSet::build(&mesh, &edges, MlsOptions::default()).unwrap();
        let n = mesh.n_nodes();
        let c = 2;
        let x: Vec<f64> = (0..n * c).map(|k| ((k * 37 % 101) as f64 / 50.0) - 1.0).collect();
        let yg: Vec<f64> = (0..n * c * 2).map(|k| ((k * 53 % 97) as f64 / 48.0) - 1.0).collect();
        let yl: Vec<f64> = (0..n * c).map(|k| ((k * 29 % 89) as f64 / 44.0) - 1.0).collect();
        let gx = ops.gradient(&x, c).unwrap();
        let mut gty = vec![0.0; n * c];
        ops.gradient.adjoint_accumulate(&ops.neighborhood, &yg, c, &mut gty).unwrap();
        let lhs: f64 = gx.iter().zip(&yg).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&gty).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
        let lx = ops.laplacian(&x, c).unwrap();
        let mut lty = vec![0.0; n * c];
        ops.laplacian.adjoint_accumulate(&ops.neighborhood, &yl, c, &mut lty).unwrap();
        let lhs: f64 = lx.iter().zip(&yl).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&lty).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
    }

    #[test]
    fn gaussian_weighting_keeps_exactness() {
        let (mesh, edges) = irregular(8);
        let opts = MlsOptions {
            gaussian_width: Some(1.5),
            ..Default::default()
        };
        let ops = MlsOperatorSet::build(&mesh, &edges, opts).unwrap();
        let s = field(&mesh, |x, y| 1.5 * x - 0.5 * y);
        for pair in ops.gradient(s.values(), 1).unwrap().chunks(2) {
            assert!((pair[0] - 1.5).abs() < 1e-9 && (pair[1] + 0.5).abs() < 1e-9);
        }
        let q = field(&mesh, |x, y| x * x + 2.0 * y * y + x * y);
        let l = ops.laplacian(q.values(), 1).unwrap();
        for (i, v) in l.iter().enumerate() {
            if !ops.laplacian.flagged()[i] {
                assert!((v - 6.0).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn dump_lists_every_node_and_edge() {
        let (mesh, edges) = make_regular_grid(3, 3, 1.0, true).unwrap();
        let ops = MlsOperatorSet::build(&mesh, &edges, MlsOptions::default()).unwrap();
        let d = ops.dump();
        assert_eq!(d.lines().filter(|l| l.starts_with("node ")).count(), 9);
        assert_eq!(d.lines().filter(|l| l.starts_with("nbr ")).count(), edges.len());
    }
}
