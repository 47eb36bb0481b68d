use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid time grid: {0}")]
    Grid(String),

    #[error("invalid profile: {0}")]
    Profile(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("structural error: {0}")]
    Structure(String),

    #[error("early slope {beta} too steep: delta = {delta} is not above -1")]
    EarlySlope { beta: f64, delta: f64 },

    #[error("invalid schedule penalty: {0}")]
    Penalty(String),

    #[error("invalid demand for OD pair {od}: {reason}")]
    Demand { od: String, reason: String },

    #[error("demand {q} for OD pair {od} lies outside [0, {cap}]")]
    DemandDomain { od: String, q: f64, cap: f64 },

    #[error("inverse demand for OD pair {od} is not invertible at cost {v}")]
    NotInvertible { od: String, v: f64 },

    #[error(
        "network did not clear by t = {horizon_end}: {residual} vehicles still in the network"
    )]
    HorizonOverflow { horizon_end: f64, residual: f64 },

    #[error("invariant failure: {0}")]
    Invariant(String),
}
