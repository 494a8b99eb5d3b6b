use thiserror::Error;

/// Errors raised by the environment, kernel, simulation and verification layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid environment law: {0}")]
    InvalidSpec(String),

    /// E[rho^2] >= 1: the walk is not in the diffusive regime.
    #[error("E[rho^2] = {m2} >= 1; the quenched CLT regime requires E[rho^2] < 1")]
    NotDiffusive { m2: f64 },

    #[error("site {site} outside usable window [{lo}, {hi}]")]
    OutsideWindow { site: i64, lo: i64, hi: i64 },

    #[error("window [{lo}, {hi}] too small: need [{need_lo}, {need_hi}]")]
    WindowTooSmall {
        lo: i64,
        hi: i64,
        need_lo: i64,
        need_hi: i64,
    },

    #[error("non-finite value in {what} at site {site}")]
    NonFinite { what: &'static str, site: i64 },

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("insufficient samples: need at least {need}, got {got}")]
    InsufficientSamples { need: usize, got: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
