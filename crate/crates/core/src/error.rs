use thiserror::Error;

use crate::spaces::Vector;

/// Best iterate reached by a failed inclusion solve.
#[derive(Debug, Clone)]
pub struct BestIterate {
    pub w: Vector,
    pub xi: Vector,
    pub residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("setup error: {0}")]
    Setup(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("{}", describe_non_convergence(*.step, .best.residual, .best.iterations))]
    NonConvergence {
        step: Option<usize>,
        best: Box<BestIterate>,
    },

    #[error("scalar oracle failed: {0}")]
    Oracle(String),

    #[error("construction error: {0}")]
    Construction(String),

    #[error("reference error: {0}")]
    Reference(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn describe_non_convergence(step: Option<usize>, residual: f64, iterations: usize) -> String {
    match step {
        Some(n) => format!(
            "inclusion solve at step {n} did not converge after {iterations} iterations (best residual {residual:.3e})"
        ),
        None => format!(
            "inclusion solve did not converge after {iterations} iterations (best residual {residual:.3e})"
        ),
    }
}

pub type Result<T> = std::result::Result<T, Error>;
