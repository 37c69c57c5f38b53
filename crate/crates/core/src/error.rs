use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or unusable input data.
    #[error("data error: {0}")]
    Data(String),

    /// A run configuration that cannot be executed as requested.
    #[error("configuration error: {0}")]
    Config(String),

    /// Tree `tree` has no out-of-bag rows, so its loss cannot be estimated.
    #[error("configuration error: tree {tree} has an empty evaluation set")]
    EmptyEvalSet { tree: usize },

    /// Trees `i` and `j` share no evaluation rows.
    #[error("configuration error: trees {i} and {j} have an empty shared evaluation set")]
    EmptyPairSet { i: usize, j: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("infeasible margin constraint mu = {mu}: achievable first moments are [{lo}, {hi}]")]
    InfeasibleMu { mu: f64, lo: f64, hi: f64 },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Data(_) | Error::Io(_) | Error::Csv(_) | Error::Json(_) => 2,
            Error::Config(_)
            | Error::EmptyEvalSet { .. }
            | Error::EmptyPairSet { .. }
            | Error::InvalidArgument(_) => 3,
            Error::InfeasibleMu { .. } | Error::Numeric(_) => 4,
        }
    }
}
