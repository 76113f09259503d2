//! Error types shared across the library.

/// Library-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    #[error("coefficient index out of range: n={n}, k={k} (need 1 <= k <= n)")]
    CoeffDomain { n: usize, k: usize },

    #[error("width profile is empty")]
    EmptyProfile,

    #[error("singular width at layer {layer}: w + gamma = {effective} <= 0")]
    SingularWidth { layer: usize, effective: f64 },

    #[error("dimension mismatch: {what}")]
    DimensionMismatch { what: String },

    #[error("invalid parameter: {what}")]
    InvalidParameter { what: String },

    #[error("non-positive predicted compliance: {predicted}")]
    NonPositivePrediction { predicted: f64 },

    #[error("non-positive observation: {observed}")]
    NonPositiveObservation { observed: f64 },

    #[error("ill-conditioned covariance: {what}")]
    IllConditioned { what: String },

    #[error(
        "infeasible plan problem: stiffest achievable compliance {stiffest_compliance} \
         exceeds target {target}"
    )]
    Infeasible {
        stiffest_compliance: f64,
        target: f64,
    },

    #[error("iteration limit reached in {phase} (best cost so far {best_cost})")]
    MaxIterations {
        phase: String,
        best_widths: Vec<f64>,
        best_cost: f64,
    },

    #[error("horizon {horizon} too large for exhaustive search (max {max})")]
    HorizonTooLarge { horizon: usize, max: usize },

    #[error("degenerate regression: {what}")]
    DegenerateRegression { what: String },

    #[error("negative slope {slope} in stiffness regression; affine width model violated")]
    NegativeSlope { slope: f64 },

    #[error("numerical failure: {what}")]
    Numerical { what: String },
}
