use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("field lives on a different grid (dim {found_dim}, {found_len} nodes, r_max {found_r_max}) than expected (dim {dim}, {len} nodes, r_max {r_max})")]
    GridMismatch {
        dim: usize,
        len: usize,
        r_max: f64,
        found_dim: usize,
        found_len: usize,
        found_r_max: f64,
    },

    #[error("negative density {value:e} at node {index}")]
    NegativeDensity { index: usize, value: f64 },

    #[error("time {time} lies outside the trajectory range [{start}, {end}]")]
    TimeOutOfRange { time: f64, start: f64, end: f64 },

    #[error("non-finite field value at t = {time} after {steps} steps")]
    NonFinite {
        time: f64,
        steps: usize,
        last_good: Box<crate::evolution::Trajectory>,
    },

    #[error("Picard iteration is not contracting (distances {distances:?}); shorten the interval")]
    NonContraction { distances: Vec<f64> },

    #[error("Picard iteration did not reach tolerance {tol:e} within {max_iter} iterations (last distance {last:e})")]
    NotConverged { tol: f64, max_iter: usize, last: f64 },

    #[error("cascade hypothesis fails on gap [{start}, {end}): longest interval {longest} < a * {total}")]
    CascadeHypothesis {
        start: usize,
        end: usize,
        longest: f64,
        total: f64,
    },

    #[error("cascade invariant violated: {0}")]
    CascadeInvariant(String),

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("internal numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
