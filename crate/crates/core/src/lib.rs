//! Finite-horizon dynamic discrete choice with quasi-hyperbolic discounting:
//! forward solution, closed-form identification of the discount factors,
//! panel simulation, maximum-likelihood estimation and Monte Carlo
//! replication.

pub mod design;
pub mod error;
pub mod estimation;
pub mod identification;
pub mod model;
pub mod montecarlo;
pub mod numeric;
pub mod simulation;

pub use error::{Assumption, Error, Result};
pub use model::{EqualityPair, ModelSpec, ValueSolution};
