//! Numerical laboratory for super-Brownian exit measures on an interval and a disk.

pub mod backbone;
pub mod conditioning;
pub mod error;
pub mod field;
pub mod geometry;
pub mod harness;
pub mod kernels;
pub mod lattice_law;
pub mod loglaplace;
pub mod model;
#[allow(non_snake_case)]
pub mod moments;
pub mod partitions;
pub mod particle;
pub mod paths;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
pub use field::{BoundaryFunction, Grid, ScalarField};
pub use geometry::{pt, Domain, Point};
