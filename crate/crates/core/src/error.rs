use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("node {node} has no neighbors")]
    IsolatedNode { node: usize },

    #[error("node {node} has {count} neighbors; the gradient fit needs at least 2")]
    UnderdeterminedGradient { node: usize, count: usize },

    #[error("node {node} has {count} neighbors; the Laplacian fit needs at least {min}")]
    UnderdeterminedLaplacian { node: usize, count: usize, min: usize },

    #[error("operator set was built for different node positions")]
    StaleOperator,

    #[error("non-finite activation in layer {layer}")]
    NumericOverflow { layer: usize },

    #[error("non-finite state after step {step}")]
    Divergence { step: usize },

    #[error("non-positive density or pressure in cell {cell}")]
    Positivity { cell: usize },

    #[error("exact Riemann solver did not converge: {0}")]
    Oracle(String),

    #[error("split construction: {0}")]
    SplitConstruction(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
