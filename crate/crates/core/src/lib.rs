//! Finite element solver and optimal boundary control for transient
//! piezoelectric elastodynamics.
//!
//! The state is an elastic wave equation coupled to an electrostatic
//! equilibrium; the control is the normal electric flux on the boundary.
//! Controls are piecewise constant per boundary triangle and continuous
//! piecewise linear in time, optimized under an H1-in-time metric by a
//! projected quasi-Newton method.

pub mod control;
pub mod error;
pub mod fespace;
pub mod harness;
pub mod materials;
pub mod mesh;
pub mod optimizer;
pub mod timestepper;

#[cfg(test)]
pub(crate) mod test_support;

pub use error::{Error, Result};
