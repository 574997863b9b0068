//! Generic optimisers used by the lineshape, decay and EMG fits.

mod lm;
mod nelder_mead;

pub use lm::{levenberg_marquardt, LmOptions, LmProblem, LmSolution};
pub use nelder_mead::{nelder_mead, NmOptions, NmSolution};

use serde::{Deserialize, Serialize};

/// Why a fit was rejected; carries the best iterate for diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, thiserror::Error)]
pub enum FitFailure {
    #[error("no convergence after {iterations} iterations (best parameters {best:?})")]
    NotConverged { iterations: usize, best: Vec<f64> },

    #[error("parameter {name} hit its bound {bound} (value {value})")]
    AtBound { name: String, value: f64, bound: f64 },

    #[error("singular curvature matrix")]
    Singular { best: Vec<f64> },

    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("parameter {name} not resolved: {value} +/- {stderr}")]
    Unresolved { name: String, value: f64, stderr: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),
}
