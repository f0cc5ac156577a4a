//! Localized variational multiscale Petrov-Galerkin discretization of
//! singularly perturbed convection-diffusion on the unit square, together
//! with Galerkin and SUPG baselines and error/decay analysis.

pub mod analysis;
pub mod cli;
pub mod error;
pub mod fem;
pub mod mesh;
pub mod multiscale;
pub mod solvers;

pub use error::{Error, Result};
