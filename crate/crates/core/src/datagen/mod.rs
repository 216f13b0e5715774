//! Ground-truth data: the shock tube with its exact Riemann oracle, the
//! shock-tube parameter grid and split, and advection–diffusion on
//! jittered meshes.

pub mod diffusion;
pub mod euler;
pub mod riemann;
pub mod shock;

pub use diffusion::{generate_diffusion_dataset, DiffusionSpec};
pub use riemann::{solve_riemann, sod_problem, Primitive, RiemannSolution};
pub use shock::{cfl_timestep, generate_shock_case, make_split, parameter_grid, CflRule, ShockCase};
