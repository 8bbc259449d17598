//! Canonical correlation analysis: population and sample estimators,
//! subspace losses, theoretical rates and a simulation harness.

pub mod cli;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod linalg;
pub mod losses;
pub mod model;
pub mod plot;
pub mod seeds;
pub mod theory;

pub use error::{Error, Result};
