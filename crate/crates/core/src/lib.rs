//! Incremental 2D pose-graph optimization with information-guided gating and
//! selective partial Gauss-Newton.
//!
//! The crate keeps a sparse Cholesky factor of the information matrix up to
//! date with rank-1 updates, decides per increment whether new measurements
//! carry enough information to warrant a global pass, and restricts each
//! Gauss-Newton iteration to the variables that are still moving.

pub mod factors;
pub mod io;
pub mod metrics;
pub mod pose_graph;
pub mod solver;
pub mod sparse;
pub mod validate;

pub use pose_graph::{Edge, EdgeKind, Graph, NodeId, Pose2};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("non-finite value {0}")]
    NonFinite(f64),
    #[error("invalid information matrix: {0}")]
    InvalidInformation(&'static str),
    #[error("relative edge from node {0} to itself")]
    SelfLoop(NodeId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("wrong edge kind: {0}")]
    WrongEdgeKind(&'static str),
    #[error("matrix not positive definite at column {column}")]
    NotPositiveDefinite { column: usize },
    #[error("downdate would break positive definiteness at column {column}")]
    DowndateBreaksSPD { column: usize },
    #[error("active block not positive definite at column {column}")]
    SBlockNotPositiveDefinite { column: usize },
    #[error("edge {from}-{to} has no initialized endpoint")]
    UnanchoredEdge { from: NodeId, to: NodeId },
    #[error("edge {edge} never connects to the anchored component")]
    UnanchoredGraph { edge: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error("line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
}
