//! Rotating capillary waves on a liquid drop.

pub mod error;
pub mod dirichlet_neumann;
pub mod geometry;
pub mod hamiltonian;
pub mod linear;
pub mod solver;
pub mod sphere;

pub use error::{Error, Result};
