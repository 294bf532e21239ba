use thiserror::Error;

/// Errors raised while building loops, fitting models or running the optimizer.
///
/// The variant name leads every message so shell harnesses can grep for it.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("SingularMatrix: {0} is not invertible within tolerance")]
    SingularMatrix(String),

    #[error("AsymmetricCovariance: {name} deviates from symmetry by {deviation:.3e} (relative)")]
    AsymmetricCovariance { name: String, deviation: f64 },

    #[error("NotPositiveDefinite: {0}")]
    NotPositiveDefinite(String),

    #[error("DimensionMismatch: {0}")]
    DimensionMismatch(String),

    #[error("DimensionTooLarge: n = {0} exceeds the cap of {max}", max = crate::MAX_DIM)]
    DimensionTooLarge(usize),

    #[error("InvalidParameter: {0}")]
    InvalidParameter(String),

    #[error("RankDeficientData: {0}")]
    RankDeficientData(String),

    #[error("NoSignChange: margin has the same sign at {lo} and {hi}")]
    NoSignChange { lo: f64, hi: f64 },

    #[error("AssumptionViolated: {0}")]
    AssumptionViolated(String),

    #[error("UnsupportedCost: {0}")]
    UnsupportedCost(String),

    #[error("InconsistentModel: {0}")]
    InconsistentModel(String),
}

pub type Result<T> = std::result::Result<T, Error>;
