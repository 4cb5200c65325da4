//! Error type shared across the crate.

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: parse error: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("face {face} references vertex {index}, but mesh has only {n_vertices} vertices")]
    FaceIndexOutOfRange {
        face: usize,
        index: usize,
        n_vertices: usize,
    },

    #[error("mesh is disconnected: {} components with sizes {sizes:?}", sizes.len())]
    DisconnectedMesh { sizes: Vec<usize> },

    #[error("zero-length edge between vertices {i} and {j}")]
    ZeroLengthEdge { i: usize, j: usize },

    #[error("node {0} has zero degree")]
    IsolatedNode(usize),

    #[error("eigensolver did not converge within {max_iters} iterations (worst residual {worst_residual:.3e})")]
    EigenNonConvergence {
        max_iters: usize,
        worst_residual: f64,
    },

    #[error("degenerate point configuration: cross-covariance is rank deficient")]
    DegenerateProcrustes,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("spectral features requested from an unaligned embedding")]
    UnalignedEmbedding,

    #[error("no labeled nodes")]
    NoLabeledNodes,

    #[error("label {label} out of range for {n_classes} classes at node {node}")]
    LabelOutOfRange {
        node: usize,
        label: i64,
        n_classes: usize,
    },

    #[error("need at least {min} subjects, got {got}")]
    TooFewSubjects { min: usize, got: usize },

    #[error("missing artifact: expected {path} ({hint})")]
    MissingArtifact { path: PathBuf, hint: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArg(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    /// Process exit code the CLI maps this error to.
    ///
    /// 2 usage, 3 data validation, 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArg(_) => 2,
            Error::EigenNonConvergence { .. } | Error::DegenerateProcrustes => 4,
            _ => 3,
        }
    }
}
