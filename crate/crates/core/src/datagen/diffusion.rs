//! Advection–diffusion trajectories on jittered meshes.
//!
//! The ground truth integrates `∂s/∂t = k ∇²s − u · ∇s` with the MLS
//! operators of the mesh itself, using RK4 substeps at a finer step than the
//! stored frames. It is self-consistent with the operators, not an external
//! reference solution.
//!
//! Nodes on the outer ring of the mesh are held at their initial values. The
//! one-sided fits there give the discrete Laplacian eigenvalues with positive
//! real part, so leaving them free makes the truth itself blow up.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Case, Split, TrajectoryDataset};
use crate::error::{invalid, Result};
use crate::field::{GlobalParams, StateField, DT_KEY};
use crate::mesh::{make_perturbed_mesh, EdgeSet, Mesh, PerturbedMeshSpec};
use crate::mls::{MlsOperatorSet, MlsOptions};
use crate::simulate::{step_values, Integrator};

pub const DIFFUSION_CHANNEL: &str = "s";
pub const K_KEY: &str = "k";
pub const UX_KEY: &str = "u_x";
pub const UY_KEY: &str = "u_y";

/// Largest `h · ρ` accepted for an RK4 substep, with `ρ` the Gershgorin
/// bound on the spectral radius of the discrete operator.
pub const RK4_STABILITY_LIMIT: f64 = 2.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSpec {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub mesh: PerturbedMeshSpec,
    /// Diffusivity range in m²/s.
    pub k_range: (f64, f64),
    /// Advection speed range in m/s.
    pub speed_range: (f64, f64),
    /// Advection direction range in radians.
    pub angle_range: (f64, f64),
    pub dt: f64,
    pub n_steps: usize,
    /// Substeps per stored frame.
    pub refinement: usize,
    pub n_bumps: usize,
    /// Nodes closer than this many grid spacings to the bounding box are
    /// held fixed.
    pub boundary_pin: f64,
    pub seed: u64,
}

impl Default for DiffusionSpec {
    fn default() -> Self {
        Self {
            n_train: 16,
            n_val: 4,
            n_test: 4,
            mesh: PerturbedMeshSpec::default(),
            k_range: (0.002, 0.006),
            speed_range: (0.15, 0.3),
            angle_range: (0.0, std::f64::consts::FRAC_PI_2),
            dt: 0.01,
            n_steps: 20,
            refinement: 10,
            n_bumps: 3,
            boundary_pin: 0.5,
            seed: 0,
        }
    }
}

/// Gershgorin bound on the spectral radius of `k ∇² − u · ∇`.
pub fn spectral_bound(ops: &MlsOperatorSet, k: f64, u: [f64; 2]) -> Result<f64> {
    let nbr = &ops.neighborhood;
    let coeffs = ops.gradient.coefficients(nbr)?;
    let weights = ops.laplacian.weights();
    let mut worst = 0.0f64;
    for i in 0..nbr.n_nodes() {
        let mut diag = 0.0;
        let mut off = 0.0;
        for s in nbr.range(i) {
            let c = coeffs[s];
            let a = k * weights[nbr.edge_ids()[s]] - (u[0] * c[0] + u[1] * c[1]);
            diag -= a;
            off += a.abs();
        }
        worst = worst.max(diag.abs() + off);
    }
    Ok(worst)
}

/// Nodes within `width` of the bounding box of the mesh.
pub fn boundary_nodes(mesh: &Mesh, width: f64) -> Vec<bool> {
    let (lo, hi) = mesh.bounds();
    mesh.positions()
        .iter()
        .map(|p| (0..2).any(|d| p[d] - lo[d] < width || hi[d] - p[d] < width))
        .collect()
}

/// Relative growth of `max |s|` tolerated before a trajectory is rejected.
/// The MLS advection term is dispersive and overshoots by a few percent.
pub const MAX_GROWTH: f64 = 0.1;

/// Integrates one case and returns `n_steps + 1` frames. Nodes with
/// `pinned[i]` keep their initial value.
#[allow(clippy::too_many_arguments)]
pub fn simulate_diffusion(
    ops: &MlsOperatorSet,
    pinned: &[bool],
    s0: &[f64],
    k: f64,
    u: [f64; 2],
    dt: f64,
    n_steps: usize,
    refinement: usize,
) -> Result<Vec<Vec<f64>>> {
    if !(dt > 0.0) || refinement == 0 {
        return Err(invalid("dt and refinement must be positive"));
    }
    let h = dt / refinement as f64;
    let bound = spectral_bound(ops, k, u)?;
    if h * bound > RK4_STABILITY_LIMIT {
        return Err(invalid(format!(
            "substep {h:e} s exceeds the stability bound {:e} s (spectral bound {bound:e} 1/s)",
            RK4_STABILITY_LIMIT / bound
        )));
    }
    if pinned.len() != s0.len() {
        return Err(invalid("pinned mask does not match the field"));
    }
    let mut rhs = |s: &[f64]| -> Result<Vec<f64>> {
        let lap = ops.laplacian(s, 1)?;
        let grad = ops.gradient(s, 1)?;
        Ok(lap
            .iter()
            .enumerate()
            .map(|(i, l)| {
                if pinned[i] {
                    0.0
                } else {
                    k * l - u[0] * grad[2 * i] - u[1] * grad[2 * i + 1]
                }
            })
            .collect())
    };
    let peak = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let limit = peak(s0) * (1.0 + MAX_GROWTH);
    let mut frames = vec![s0.to_vec()];
    let mut s = s0.to_vec();
    for step in 1..=n_steps {
        for _ in 0..refinement {
            s = step_values(Integrator::Rk4, &mut rhs, &s, h)?;
        }
        if !(peak(&s) <= limit) {
            return Err(invalid(format!(
                "max |s| grew from {:e} to {:e} by frame {step}; the discrete operator is unstable for k = {k}, u = {u:?}",
                peak(s0),
                peak(&s)
            )));
        }
        frames.push(s.clone());
    }
    Ok(frames)
}

/// Sum of Gaussian bumps kept away from the boundary.
fn initial_field<R: Rng>(mesh: &Mesh, extent: f64, n_bumps: usize, rng: &mut R) -> Vec<f64> {
    let bumps: Vec<(f64, f64, f64, f64)> = (0..n_bumps)
        .map(|_| {
            let cx = extent * rng.random_range(0.3..0.7);
            let cy = extent * rng.random_range(0.3..0.7);
            let width = extent * rng.random_range(0.08..0.14);
            let amp = rng.random_range(0.5..1.0) * if rng.random_bool(0.7) { 1.0 } else { -1.0 };
            (cx, cy, width, amp)
        })
        .collect();
    mesh.positions()
        .iter()
        .map(|p| {
            bumps
                .iter()
                .map(|&(cx, cy, w, a)| {
                    let r2 = (p[0] - cx).powi(2) + (p[1] - cy).powi(2);
                    a * (-r2 / (2.0 * w * w)).exp()
                })
                .sum()
        })
        .collect()
}

/// Builds one case from explicit parameters.
#[allow(clippy::too_many_arguments)]
pub fn diffusion_case(
    id: &str,
    mesh: Mesh,
    edges: EdgeSet,
    s0: Vec<f64>,
    k: f64,
    u: [f64; 2],
    dt: f64,
    n_steps: usize,
    refinement: usize,
    pinned: &[bool],
    split: Option<Split>,
) -> Result<Case> {
    let ops = MlsOperatorSet::build(&mesh, &edges, MlsOptions::default())?;
    let frames = simulate_diffusion(&ops, pinned, &s0, k, u, dt, n_steps, refinement)?;
    let channels = vec![DIFFUSION_CHANNEL.to_string()];
    let frames = frames
        .into_iter()
        .enumerate()
        .map(|(t, v)| StateField::new(v, channels.clone(), t as f64 * dt))
        .collect::<Result<Vec<_>>>()?;
    let globals = GlobalParams::new([
        (K_KEY.to_string(), k),
        (UX_KEY.to_string(), u[0]),
        (UY_KEY.to_string(), u[1]),
        (DT_KEY.to_string(), dt),
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

fn draw(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    if range.1 > range.0 {
        rng.random_range(range.0..range.1)
    } else {
        range.0
    }
}

/// Labeled dataset: train cases first, then validation, then test.
pub fn generate_diffusion_dataset(spec: &DiffusionSpec) -> Result<TrajectoryDataset> {
    for (name, r) in [("k", spec.k_range), ("speed", spec.speed_range)] {
        if r.0 < 0.0 || r.1 < r.0 {
            return Err(invalid(format!("{name} range must satisfy 0 <= min <= max")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let labels = std::iter::repeat_n(Split::Train, spec.n_train)
        .chain(std::iter::repeat_n(Split::Val, spec.n_val))
        .chain(std::iter::repeat_n(Split::Test, spec.n_test));
    let mut cases = Vec::new();
    for (c, split) in labels.enumerate() {
        let mesh_seed: u64 = rng.random();
        let k = draw(&mut rng, spec.k_range);
        let speed = draw(&mut rng, spec.speed_range);
        let angle = draw(&mut rng, spec.angle_range);
        let (mesh, edges) = make_perturbed_mesh(&spec.mesh, mesh_seed)?;
        let s0 = initial_field(&mesh, spec.mesh.extent, spec.n_bumps, &mut rng);
        let spacing = spec.mesh.extent / spec.mesh.nx.max(spec.mesh.ny) as f64;
        let pinned = boundary_nodes(&mesh, spec.boundary_pin * spacing);
        cases.push(diffusion_case(
            &format!("diffusion_{c:03}"),
            mesh,
            edges,
            s0,
            k,
            [speed * angle.cos(), speed * angle.sin()],
            spec.dt,
            spec.n_steps,
            spec.refinement,
            &pinned,
            Some(split),
        )?);
    }
    Ok(TrajectoryDataset { cases })
}
