use thiserror::Error;

use crate::tree::{NodeId, NodeKind, TreeShape};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("node {0} does not exist in this tree")]
    UnknownNode(NodeId),

    #[error("cannot attach an answer under a {kind:?} node ({id})")]
    InvalidParent { id: NodeId, kind: NodeKind },

    #[error("operation requires a {expected:?} tree, found {found:?}")]
    WrongShape {
        expected: TreeShape,
        found: TreeShape,
    },

    #[error("generator slot {slot} out of range (tree has {slots})")]
    BadGenSlot { slot: usize, slots: usize },

    #[error("tree has no scored answer nodes")]
    NoScoredNodes,

    #[error("non-finite score {0}")]
    NonFiniteScore(f64),

    #[error("score {0} outside [0, 1]")]
    ScoreOutOfRange(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("no observations to fit")]
    EmptyObservations,

    #[error("group index {index} out of range ({groups} groups)")]
    GroupOutOfRange { index: usize, groups: usize },

    #[error("empty action list")]
    EmptyActions,

    #[error("tree invariant violated: {0}")]
    Invariant(String),

    #[error("malformed tree document: {0}")]
    Import(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("generator unavailable: {0}")]
    GeneratorUnavailable(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
