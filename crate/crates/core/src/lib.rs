//! Alignment dynamics on the torus and in open space, with exact bookkeeping of
//! the dissipated quantities, an event-driven sticky-particle limit, integer
//! relation detection for cluster velocities and a seeded Monte Carlo harness.

pub mod diagnostics;
mod dsu;
pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod integrator;
pub mod model;
pub mod relations;
pub mod sticky;

pub use error::{Error, Result};
pub use geometry::Domain;
pub use dynamics::{EnsembleState, Force, SystemSpec};
pub use model::{KernelSpec, PotentialSpec};

/// Crate version embedded in every output artifact.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
