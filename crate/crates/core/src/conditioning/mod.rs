//! Concrete H-transform densities and the tables they are built from.

pub mod mass;
pub mod point;
pub mod poisson;
pub mod series;

pub use mass::*;
pub use point::*;
pub use poisson::*;
pub use series::*;
