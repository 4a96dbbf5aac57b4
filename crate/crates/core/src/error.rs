//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid environment, policy, or run configuration.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A per-step transition probability exceeded one while discretizing a
    /// continuous-time chain.
    #[error("uniformization violated at t={t}, state={state}: step probability {prob} > 1")]
    Uniformization { t: usize, state: usize, prob: f64 },

    /// Malformed rate-table CSV. `row` is the 1-based data row.
    #[error("rate table error at row {row}: {msg}")]
    RateTable { row: usize, msg: String },

    /// An estimator could not be evaluated on the given data.
    #[error("estimation error: {0}")]
    Estimation(String),

    /// The fitted time-homogeneous chain has no unique recurrent class, so
    /// average-reward Q-values are not identified.
    #[error("fitted chain is not unichain: {0}")]
    NotUnichain(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
