//! Large-deviation rate functions for holes in Gaussian random field
//! excursion sets.
//!
//! For a centered continuous Gaussian field X on a compact index set, the
//! probability that X exceeds a high level u everywhere on a set K₁ while
//! dropping below r·u somewhere on a set K₂ decays like exp(−D·u²/2). The
//! rate D is the squared RKHS norm of the cheapest field profile that is
//! ≥ 1 on K₁ and ≤ r on K₂. This crate computes D three ways and checks
//! them against each other:
//!
//! * [`primal`] — direct convex quadratic minimization over coefficients of
//!   the representers at the discretized nodes;
//! * [`dual`] — the reciprocal of a minimum of kernel energy forms over
//!   pairs of probability measures, with first-order optimality checks;
//! * [`isotropic`] — closed forms for spheres with a center or off-center
//!   hole, the most likely sphere radius, and the hole-anywhere rate;
//!
//! plus [`shape`] for the most likely profile of the conditioned field and
//! [`mc`] for Monte Carlo validation of the predicted decay via exponential
//! tilting.
//!
//! Kernels live in [`kernel`]; point sets, discrete measures and sphere
//! quadrature in [`geometry`].

pub mod error;
pub mod gauss;
pub mod geometry;
pub mod kernel;

pub mod dual;
pub mod isotropic;
pub mod mc;
pub mod primal;
pub mod shape;

pub use error::{Error, Result};
pub use geometry::{DiscreteMeasure, PointSet, SphereGrid};
pub use kernel::{CovMatrix, IsotropicKernel};

// re-exported so downstream crates build matrices against the same version
pub use nalgebra;
