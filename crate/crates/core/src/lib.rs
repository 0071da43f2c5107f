//! Hierarchical renormalisation-group engine for the two-dimensional
//! hierarchical Anderson equation on unit lattices.

pub mod error;
pub mod flow;
pub mod lattice;
pub mod linalg;
pub mod noise;
pub mod norms;
pub mod operators;
pub mod rng;
pub mod solver;
pub mod verify;

pub use error::{Error, Result};
