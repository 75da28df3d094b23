use thiserror::Error;

/// Errors produced by the solver, the robustifier and the file layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("feature index {index} out of range for alphabet of size {size}")]
    IndexOutOfRange { index: usize, size: usize },

    #[error("degenerate contamination: eps0 and eps1 must be < 1 (got eps0={eps0}, eps1={eps1})")]
    DegenerateContamination { eps0: f64, eps1: f64 },

    #[error("no likelihood-ratio band satisfies both normalization equations (residuals {residual_null:.3e}, {residual_target:.3e})")]
    InfeasibleBand { residual_null: f64, residual_target: f64 },

    #[error("energy budget {budget} outside achievable range [{min}, {max}]")]
    InfeasibleBudget { budget: f64, min: f64, max: f64 },

    #[error("invalid detection graph: {0}")]
    Graph(String),

    #[error("policy does not match system: {0}")]
    PolicyMismatch(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
