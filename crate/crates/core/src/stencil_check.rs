//! Exactness and invariance checks of the MLS operators over seeded random
//! meshes.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::mesh::{make_perturbed_mesh, EdgeSet, Mesh, PerturbedMeshSpec, Point};
use crate::mls::{MlsOperatorSet, MlsOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StencilCheckOptions {
    pub n_meshes: usize,
    pub seed: u64,
    pub mesh: PerturbedMeshSpec,
    pub mls: MlsOptions,
    pub gradient_tol: f64,
    pub laplacian_tol: f64,
    /// Largest accepted flagged-node fraction.
    pub flagged_limit: f64,
}

impl Default for StencilCheckOptions {
    fn default() -> Self {
        Self {
            n_meshes: 100,
            seed: 0,
            mesh: PerturbedMeshSpec::default(),
            mls: MlsOptions::default(),
            gradient_tol: 1e-9,
            laplacian_tol: 1e-8,
            flagged_limit: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WorstNode {
    pub mesh: usize,
    pub node: usize,
    pub error: f64,
}

impl WorstNode {
    fn offer(&mut self, mesh: usize, node: usize, error: f64) {
        if !(error <= self.error) {
            *self = Self { mesh, node, error };
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StencilCheckReport {
    pub n_meshes: usize,
    pub n_nodes: usize,
    /// Gradient of random affine fields against their coefficients.
    pub gradient: WorstNode,
    /// Laplacian of random quadratics on unflagged nodes.
    pub laplacian: WorstNode,
    /// `(mesh, node)` pairs flagged by either stencil.
    pub flagged: Vec<(usize, usize)>,
    /// Largest `|A(αa + βb) − αAa − βAb|` relative to `|α||Aa| + |β||Ab|`.
    pub linearity: f64,
    /// Largest absolute output on constant fields.
    pub constant: f64,
    pub rebuild_identical: bool,
    /// Stencils unchanged bit for bit under translations that are exact in
    /// floating point.
    pub translation_identical: bool,
    /// Largest relative stencil change under a generic translation.
    pub translation_rel: f64,
    /// Largest relative deviation from `w ∝ α⁻²` and `M⁻¹ ∝ α⁻²`.
    pub scale_rel: f64,
    /// Same for `α = 2`, where the scaling is exact in floating point.
    pub scale_pow2_identical: bool,
}

pub const LINEARITY_TOL: f64 = 1e-12;
pub const INVARIANCE_TOL: f64 = 1e-10;

impl StencilCheckReport {
    pub fn flagged_fraction(&self) -> f64 {
        if self.n_nodes == 0 {
            0.0
        } else {
            self.flagged.len() as f64 / self.n_nodes as f64
        }
    }

    pub fn gradient_ok(&self, opts: &StencilCheckOptions) -> bool {
        self.gradient.error < opts.gradient_tol
    }

    pub fn laplacian_ok(&self, opts: &StencilCheckOptions) -> bool {
        self.laplacian.error < opts.laplacian_tol
    }

    pub fn flagged_ok(&self, opts: &StencilCheckOptions) -> bool {
        self.flagged_fraction() < opts.flagged_limit
    }

    pub fn invariants_ok(&self) -> bool {
        self.linearity <= LINEARITY_TOL
            && self.constant == 0.0
            && self.rebuild_identical
            && self.translation_identical
            && self.translation_rel <= INVARIANCE_TOL
            && self.scale_rel <= INVARIANCE_TOL
            && self.scale_pow2_identical
    }

    /// Exactness and invariants. Flagged nodes are reported, not failed.
    pub fn passed(&self, opts: &StencilCheckOptions) -> bool {
        self.gradient_ok(opts) && self.laplacian_ok(opts) && self.invariants_ok()
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "meshes {} nodes {}", self.n_meshes, self.n_nodes);
        let g = self.gradient;
        let l = self.laplacian;
        let _ = writeln!(s, "gradient max error {:.3e} (mesh {} node {})", g.error, g.mesh, g.node);
        let _ = writeln!(s, "laplacian max error {:.3e} (mesh {} node {})", l.error, l.mesh, l.node);
        let _ = writeln!(
            s,
            "flagged nodes {} ({:.3}%)",
            self.flagged.len(),
            100.0 * self.flagged_fraction()
        );
        for (m, i) in self.flagged.iter().take(20) {
            let _ = writeln!(s, "  flagged mesh {m} node {i}");
        }
        let _ = writeln!(s, "linearity {:.3e}", self.linearity);
        let _ = writeln!(s, "constant field output {:.3e}", self.constant);
        let _ = writeln!(s, "rebuild bit-identical {}", self.rebuild_identical);
        let _ = writeln!(
            s,
            "translation bit-identical {} generic {:.3e}",
            self.translation_identical, self.translation_rel
        );
        let _ = writeln!(
            s,
            "scale covariance {:.3e} (alpha = 2 bit-identical {})",
            self.scale_rel, self.scale_pow2_identical
        );
        s
    }
}

fn coeffs(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn stencil_bits(ops: &MlsOperatorSet) -> (Vec<u64>, Vec<u64>) {
    let g = (0..ops.n_nodes())
        .flat_map(|i| ops.gradient.inverse(i))
        .map(f64::to_bits)
        .collect();
    let l = ops.laplacian.weights().iter().map(|w| w.to_bits()).collect();
    (g, l)
}

/// Largest relative gap between two stencil sets after scaling `b` by `factor`.
fn stencil_rel(a: &MlsOperatorSet, b: &MlsOperatorSet, factor: f64) -> f64 {
    let n = a.n_nodes();
    let ga: Vec<f64> = (0..n).flat_map(|i| a.gradient.inverse(i)).collect();
    let gb: Vec<f64> = (0..n).flat_map(|i| b.gradient.inverse(i)).collect();
    let rel = |x: &[f64], y: &[f64]| {
        let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        x.iter()
            .zip(y)
            .map(|(p, q)| (p - factor * q).abs() / scale)
            .fold(0.0, f64::max)
    };
    rel(&ga, &gb).max(rel(a.laplacian.weights(), b.laplacian.weights()))
}

fn moved(mesh: &Mesh, f: impl Fn(&Point) -> Point) -> Result<Mesh> {
    Mesh::new(mesh.positions().iter().map(f).collect())
}

/// Positions rounded to multiples of 2⁻²⁰, so that shifts by such multiples
/// are exact.
fn dyadic(mesh: &Mesh) -> Result<Mesh> {
    let q = (1u64 << 20) as f64;
    moved(mesh, |p| [(p[0] * q).round() / q, (p[1] * q).round() / q])
}

/// Checks one mesh; `index` labels it in the report.
pub fn check_mesh(
    report: &mut StencilCheckReport,
    index: usize,
    mesh: &Mesh,
    edges: &EdgeSet,
    mls: MlsOptions,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let ops = MlsOperatorSet::build(mesh, edges, mls)?;
    let n = mesh.n_nodes();
    let pos = mesh.positions();
    report.n_meshes += 1;
    report.n_nodes += n;
    let flagged_l = ops.laplacian.flagged();
    for i in ops.flagged_nodes() {
        report.flagged.push((index, i));
    }

    let a = coeffs(rng, 3);
    let affine: Vec<f64> = pos.iter().map(|p| a[0] + a[1] * p[0] + a[2] * p[1]).collect();
    let g = ops.gradient(&affine, 1)?;
    for i in 0..n {
        if ops.gradient.flagged()[i] {
            continue;
        }
        let e = (g[2 * i] - a[1]).abs().max((g[2 * i + 1] - a[2]).abs());
        report.gradient.offer(index, i, e);
    }

    let q = coeffs(rng, 6);
    let quad: Vec<f64> = pos
        .iter()
        .map(|p| q[0] + q[1] * p[0] + q[2] * p[1] + q[3] * p[0] * p[0] + q[4] * p[1] * p[1] + q[5] * p[0] * p[1])
        .collect();
    let exact = 2.0 * (q[3] + q[4]);
    let l = ops.laplacian(&quad, 1)?;
    for i in 0..n {
        if !flagged_l[i] {
            report.laplacian.offer(index, i, (l[i] - exact).abs());
        }
    }

    let s1 = coeffs(rng, n);
    let s2 = coeffs(rng, n);
    let (alpha, beta) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
    let mix: Vec<f64> = s1.iter().zip(&s2).map(|(x, y)| alpha * x + beta * y).collect();
    for op in [0, 1] {
        let apply = |v: &[f64]| if op == 0 { ops.gradient(v, 1) } else { ops.laplacian(v, 1) };
        let (m, a1, a2) = (apply(&mix)?, apply(&s1)?, apply(&s2)?);
        for k in 0..m.len() {
            let denom = (alpha.abs() * a1[k].abs() + beta.abs() * a2[k].abs()).max(f64::MIN_POSITIVE);
            let e = (m[k] - alpha * a1[k] - beta * a2[k]).abs() / denom.max(1.0);
            report.linearity = report.linearity.max(e);
        }
    }

    let c = vec![rng.random_range(-10.0..10.0); n];
    let gc = ops.gradient(&c, 1)?;
    let lc = ops.laplacian(&c, 1)?;
    report.constant = gc.iter().chain(&lc).fold(report.constant, |m, v| m.max(v.abs()));

    let again = MlsOperatorSet::build(mesh, edges, mls)?;
    report.rebuild_identical &= stencil_bits(&again) == stencil_bits(&ops);

    let base = dyadic(mesh)?;
    let base_ops = MlsOperatorSet::build(&base, edges, mls)?;
    let shifted = moved(&base, |p| [p[0] + 3.25, p[1] - 1.5])?;
    let shifted_ops = MlsOperatorSet::build(&shifted, edges, mls)?;
    report.translation_identical &= stencil_bits(&base_ops) == stencil_bits(&shifted_ops);

    let t = [rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)];
    let generic = MlsOperatorSet::build(&moved(mesh, |p| [p[0] + t[0], p[1] + t[1]])?, edges, mls)?;
    report.translation_rel = report.translation_rel.max(stencil_rel(&ops, &generic, 1.0));

    let alpha: f64 = rng.random_range(0.2..5.0);
    let scaled = MlsOperatorSet::build(&moved(mesh, |p| [alpha * p[0], alpha * p[1]])?, edges, mls)?;
    report.scale_rel = report.scale_rel.max(stencil_rel(&ops, &scaled, alpha * alpha));
    let doubled = MlsOperatorSet::build(&moved(mesh, |p| [2.0 * p[0], 2.0 * p[1]])?, edges, mls)?;
    let (g0, l0) = stencil_bits(&ops);
    let (g2, l2) = stencil_bits(&doubled);
    let quarter = |bits: &[u64]| -> Vec<u64> { bits.iter().map(|b| (f64::from_bits(*b) / 4.0).to_bits()).collect() };
    report.scale_pow2_identical &= quarter(&g0) == g2 && quarter(&l0) == l2;
    Ok(())
}

/// Runs the suite over `opts.n_meshes` jittered meshes, then over `extra`
/// (numbered from `opts.n_meshes`).
pub fn run_stencil_check(opts: &StencilCheckOptions, extra: &[(Mesh, EdgeSet)]) -> Result<StencilCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = StencilCheckReport {
        rebuild_identical: true,
        translation_identical: true,
        scale_pow2_identical: true,
        ..Default::default()
    };
    for m in 0..opts.n_meshes {
        let mesh_seed: u64 = rng.random();
        let (mesh, edges) = make_perturbed_mesh(&opts.mesh, mesh_seed)?;
        check_mesh(&mut report, m, &mesh, &edges, opts.mls, &mut rng)?;
    }
    for (k, (mesh, edges)) in extra.iter().enumerate() {
        check_mesh(&mut report, opts.n_meshes + k, mesh, edges, opts.mls, &mut rng)?;
    }
    Ok(report)
}
