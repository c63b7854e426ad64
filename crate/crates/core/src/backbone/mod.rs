//! Conditioned processes realized as a branching backbone of h-transformed
//! particles dressed with immigrating unconditioned clusters.
//!
//! Everything here lives in the particle world with N particles per unit
//! mass. A backbone particle carries a label (an exit count, or a set of
//! marked boundary points), moves as the h-transform of ½Δ − l with h the
//! label's field, dies at rate Γ/h where ½Δh − l h = −Γ, and hands its label
//! to two children. Side branches are proposed at the branching rate 4N and
//! kept when they are compatible with the conditioning.

mod mass;
mod path;
mod point;
mod tree;

pub use mass::*;
pub use path::*;
pub use point::*;
pub use tree::*;
