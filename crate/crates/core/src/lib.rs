//! Numerical homogenization toolkit for Stokes systems with rapidly
//! oscillating periodic coefficients.
//!
//! The crate is organized around six subsystems:
//!
//! * [`coeff`] — periodic coefficient tensors, ellipticity checks, and the
//!   incompressible-elasticity reduction.
//! * [`torus`] — the periodic cell problem on the unit torus: correctors,
//!   the effective tensor, the flux tensor, and dual correctors.
//! * [`stokes_bvp`] — staggered-grid Dirichlet solves on box domains for the
//!   oscillating and homogenized operators.
//! * [`green`] — discrete Green's functions and large-box fundamental
//!   solutions, with decay and symmetry diagnostics.
//! * [`expand`] — Dirichlet correctors, two-scale expansion errors, the
//!   divergence solver, and the truncated maximal function.
//! * [`xharness`] — experiment orchestration, rate fitting, reports, and
//!   persistence.

pub mod coeff;
pub mod expand;
pub mod green;
pub mod krylov;
pub mod snapshot;
pub mod stokes_bvp;
pub mod tensor;
pub mod torus;
pub mod xharness;

pub use coeff::{CoefficientField, ElasticityTensor};
pub use stokes_bvp::{BoxDomain, StokesProblem, StokesSolution};
pub use tensor::Tensor4;
pub use torus::{CorrectorSet, TorusGrid};
pub use xharness::{ExperimentConfig, RateFit};
