use thiserror::Error;

/// Errors surfaced by table builders, evaluators, and experiments.
#[derive(Debug, Error)]
pub enum Error {
    /// A numeric argument violated a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A boundary condition outside the supported set was requested.
    #[error("unsupported boundary condition {0:?}: supported are dirichlet, neumann, periodic, free")]
    UnsupportedBoundary(String),

    /// A point lies outside the configured box.
    #[error("point outside the box: coordinate {coord} = {value} exceeds half-side {half_side}")]
    OutsideBox {
        coord: usize,
        value: f64,
        half_side: f64,
    },

    /// A table was asked for an index beyond what it covers.
    #[error("{table} covers indices up to {max}, requested {requested}")]
    TableRange {
        table: &'static str,
        max: usize,
        requested: usize,
    },

    /// An iterative solver did not reach its tolerance.
    #[error("{what} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    /// Experiment configuration is inconsistent with the requested physics.
    #[error("configuration error: {0}")]
    Config(String),

    /// Reading or writing a table file failed.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A serialized table file did not parse.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
