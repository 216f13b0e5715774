//! Meshless differential operators on graphs and a learned autoregressive
//! PDE surrogate built on them.
//!
//! * [`mesh`], [`field`], [`dataset`]: meshes, neighborhoods, state fields and
//!   the trajectory container format.
//! * [`mls`]: moving-least-squares gradient and Laplacian stencils.
//! * [`nn`]: the learned operator, its reverse-mode gradients, AdamW and
//!   the free-running training loop.
//! * [`simulate`]: explicit integrators and rollouts.
//! * [`datagen`]: shock-tube and advection-diffusion ground truth.
//! * [`metrics`]: rollout error metrics.

mod bytes;
pub mod datagen;
pub mod dataset;
pub mod error;
pub mod field;
pub mod mesh;
pub mod metrics;
pub mod mls;
pub mod nn;
pub mod simulate;
pub mod stencil_check;

pub use error::{Error, Result};
