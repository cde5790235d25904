use std::io;

use crate::deform::DeformationKind;

/// Errors produced anywhere in the certification pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("point cloud must contain at least one point")]
    EmptyCloud,

    #[error("non-finite coordinate at point {index}")]
    NonFiniteCoordinate { index: usize },

    #[error("{kind} expects {expected} parameters, got {got}")]
    ParameterArity {
        kind: DeformationKind,
        expected: usize,
        got: usize,
    },

    #[error("non-finite deformation parameter at position {index}")]
    NonFiniteParameter { index: usize },

    #[error("cardinality mismatch: cloud has {cloud} points, field has {field}")]
    CardinalityMismatch { cloud: usize, field: usize },

    #[error("{0} has no homogeneous matrix form")]
    UnsupportedKind(DeformationKind),

    #[error("unknown deformation kind `{0}`")]
    UnknownKind(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("classifier returned no classes")]
    NoClasses,

    #[error("classifier error: {0}")]
    Classifier(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("timed out after {0:.1} s waiting for the oracle")]
    Timeout(f64),

    #[error("format error: {0}")]
    Format(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
