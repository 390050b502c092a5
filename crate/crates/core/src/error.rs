use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{what} = {value} outside the admissible domain {domain}")]
    Domain {
        what: &'static str,
        value: f64,
        domain: &'static str,
    },

    #[error("invalid parameters: {}", .0.join("; "))]
    InvalidTheta(Vec<String>),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("exact state dimension {requested} exceeds the cap {cap}")]
    StateTooLarge { requested: usize, cap: usize },

    #[error("prediction-error covariance is numerically singular at t = {t}")]
    SingularCovariance { t: usize },

    #[error("Cholesky factorisation failed at pivot {pivot} (value {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("b = {b} outside the ARMA table hull [{lo}, {hi}]")]
    OutsideTable { b: f64, lo: f64, hi: f64 },

    #[error("ARMA fit at b = {b} did not converge (best mse {best_mse:e})")]
    ArmaFit { b: f64, best_mse: f64 },

    #[error("likelihood evaluation failed at theta {theta}: {source}")]
    Likelihood {
        theta: String,
        #[source]
        source: Box<Error>,
    },

    #[error("every starting value failed ({census})")]
    AllStartsFailed { census: String },

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
