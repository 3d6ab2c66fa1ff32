use std::path::PathBuf;

use crate::qp::SolveStatus;

/// Errors raised while building or solving market models.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown investor `{0}`")]
    UnknownInvestor(String),

    #[error("invalid scenario {index}: {reason}")]
    InvalidScenario { index: usize, reason: String },

    #[error("total supply {supply} exceeds demand {demand}")]
    InfeasibleSupply { supply: f64, demand: f64 },

    #[error("solver finished with status {0:?}")]
    Solver(SolveStatus),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("accounting error: {0}")]
    Accounting(String),

    #[error("network error: {0}")]
    Network(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    SupplyCurve(#[from] crate::supply_curve::SupplyCurveError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidModel(msg.into())
}
