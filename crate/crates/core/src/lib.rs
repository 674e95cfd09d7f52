//! Regularized empirical risk minimization for generalized self-concordant losses,
//! with exact diagnostics on finitely supported populations.

pub mod constants;
pub mod error;
pub mod linalg;
pub mod objective;
pub mod population;
pub mod rates;
pub mod sampling;
pub mod scloss;
pub mod scverify;
pub mod solver;
pub mod special;
pub mod stats;

pub use error::{Error, Result};
pub use population::{FinitePopulation, PopulationSolution};
pub use scloss::{LossKind, LossModel, Sample};
pub use solver::{SolveResult, SolverConfig};
