use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("invalid disorder law: {0}")]
    Law(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("rate family violates constraints: {0}")]
    Rates(String),
    #[error("size cap exceeded: {what} needs {needed}, cap is {cap}")]
    CapExceeded {
        what: &'static str,
        needed: usize,
        cap: usize,
    },
    #[error("{method} did not converge (achieved {achieved:e})")]
    NonConvergence { method: &'static str, achieved: f64 },
    #[error("CFL condition violated: dt = {dt:e} > {limit:e}")]
    Cfl { dt: f64, limit: f64 },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Rates(_) | Error::InvalidArgument(_) | Error::Geometry(_) | Error::Law(_) => 1,
            Error::NonConvergence { .. } | Error::Cfl { .. } => 2,
            Error::CapExceeded { .. } => 3,
            Error::Io(_) | Error::Json(_) | Error::Csv(_) => 1,
        }
    }
}
