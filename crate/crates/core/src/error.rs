use thiserror::Error;

use crate::inversion::InversionTrace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("jacobi eigensolver did not converge after {sweeps} sweeps (off-diagonal norm {off_diagonal:e})")]
    NonConvergence { sweeps: usize, off_diagonal: f64 },

    /// The vector being projected lies (numerically) in the span of the removed eigenvectors.
    #[error("direction collapsed while removing eigenvector {index} (norm {norm:e} before normalization)")]
    Collapse { index: usize, norm: f64 },

    #[error("size cap exceeded: {what} = {size} > {cap}")]
    SizeCap {
        what: &'static str,
        size: usize,
        cap: usize,
    },

    #[error("inversion diverged (residual {residual:e} at iteration {iteration})")]
    Divergence {
        residual: f64,
        iteration: usize,
        trace: Box<InversionTrace>,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn check_len(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            found,
        });
    }
    Ok(())
}
