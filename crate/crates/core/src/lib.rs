//! Discrete nonlinear potential theory on weighted graphs.
//!
//! A metric measure space is discretized as a finite weighted graph
//! ([`mmspace`]). On top of it the crate evaluates and minimizes the discrete
//! p-Dirichlet energy ([`penergy`]), computes relative p-capacities and
//! p-potentials ([`capacity`]), builds p-harmonic Green's functions from a
//! point source ([`green`]) and fits their local behavior near the
//! singularity ([`asympt`]).
//!
//! ```no_run
//! use greenlab::capacity::{solve_capacity, CapacityProblem};
//! use greenlab::mmspace::build_grid;
//! use greenlab::penergy::EnergyConfig;
//!
//! let space = build_grid(2, 0.5, 1.0 / 64.0, 0.0).unwrap();
//! let origin = space.nearest_vertex(&[0.0, 0.0]);
//! let problem = CapacityProblem::ring(&space, origin, 0.1, 0.4, 2.0).unwrap();
//! let result = solve_capacity(&space, &problem, &EnergyConfig::with_p(2.0)).unwrap();
//! println!("capacity = {}", result.value);
//! ```

pub mod asympt;
pub mod capacity;
mod error;
pub mod fit;
pub mod green;
pub(crate) mod linalg;
pub mod mmspace;
pub mod numeric;
pub mod penergy;
pub mod sets;

pub use error::{Error, Result};
pub use penergy::{EnergyConfig, PotentialField};
pub use mmspace::MetricMeasureSpace;

pub use sets::VertexSet;
