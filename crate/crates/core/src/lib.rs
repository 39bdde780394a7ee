//! Radial isentropic compressible Navier-Stokes flow with density-dependent
//! viscosity in the exterior of a ball, with the diagnostics needed to check
//! its energy, BD entropy and effective-velocity structure numerically.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod characteristics;
pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod grid;
pub mod initdata;
pub mod model;
pub mod reconstruct;
pub mod solver;
pub mod validation;

#[cfg(test)]
mod oracle;

pub use grid::RadialGrid;
pub use model::{ModelParams, ShallowVariant, ViscousAssembly};
pub use solver::{FluidState, Formulation, Solver, SolverConfig};
pub use validation::validate_initial_data;
