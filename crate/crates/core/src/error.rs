use nalgebra::DVector;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid convex set: {0}")]
    InvalidSet(String),

    #[error("infeasible specification: {0}")]
    InfeasibleSpec(String),

    /// Dykstra ran out of sweeps; carries the last iterate so callers can
    /// decide whether it is good enough.
    #[error("Dykstra exceeded {sweeps} sweeps (membership residual {residual:.3e})")]
    MaxSweepsExceeded {
        sweeps: usize,
        residual: f64,
        best: DVector<f64>,
    },

    #[error("intersection looks empty: cyclic residual stagnated at {residual:.3e}")]
    EmptyIntersectionSuspected { residual: f64 },

    #[error("Sinkhorn balancing stalled at residual {residual:.3e} after {iterations} iterations")]
    SinkhornStalled { residual: f64, iterations: usize },

    #[error("iteration limit {max_iter} reached with residual {residual:.3e}")]
    MaxIterExceeded { max_iter: usize, residual: f64 },

    #[error("non-finite value detected at iteration {iteration}")]
    NonFiniteDetected { iteration: usize },

    #[error("matrix `{name}` is not positive definite")]
    NotPositiveDefinite { name: &'static str },

    #[error("graph is not strongly connected ({components} components)")]
    NotStronglyConnected { components: usize },
}

pub(crate) fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        })
    }
}
