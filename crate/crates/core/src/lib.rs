//! Constraint-energy-minimizing discontinuous Petrov–Galerkin multiscale
//! solver for steady convection-diffusion on the unit square.

pub mod assembly;
pub mod coeff;
pub mod element;
pub mod error;
pub mod experiment;
pub mod mesh;
pub mod solver;
pub mod sparse;
pub mod spectral;
pub mod testspace;

pub use error::{Error, Result};
