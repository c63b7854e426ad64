//! Configuration, orchestration, reports and the acceptance suite.

mod compare;
mod config;
mod criteria;
mod report;
mod run;

pub use compare::*;
pub use config::*;
pub use criteria::*;
pub use report::*;
pub use run::*;
