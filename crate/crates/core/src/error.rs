use thiserror::Error;

/// Errors raised by model construction, the moment solvers and the simulator.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the function (e.g. negative time).
    #[error("domain error: {0}")]
    Domain(String),

    /// The caller supplied an invalid model, index or configuration.
    #[error("usage error: {0}")]
    Usage(String),

    /// A numerical routine produced a non-finite or inconsistent value.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// An ODE integration produced a non-finite state.
    #[error("divergence at t = {last_good_time}: {reason}")]
    Divergence { last_good_time: f64, reason: String },

    #[error("model error: {0}")]
    Model(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Domain(_) | Error::Model(_) => 2,
            Error::Numerical(_) | Error::Divergence { .. } => 3,
            Error::Io(_) | Error::Json(_) | Error::Csv(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
