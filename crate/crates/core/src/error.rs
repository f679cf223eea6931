use thiserror::Error;

use crate::graph::NodeId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("graphs are defined over different node sets")]
    NodeSetMismatch,
    #[error("node {0} is not part of the graph")]
    UnknownNode(NodeId),
    #[error("node {0} listed more than once")]
    DuplicateNode(NodeId),
    #[error("graphs support between 1 and {max} nodes, got {got}")]
    NodeCount { got: usize, max: usize },
    #[error("subset enumeration is limited to {max} nodes, got {got}")]
    TooLargeForEnumeration { got: usize, max: usize },
    #[error("connectivity parameter c = {c} must satisfy 1 <= c < {n}")]
    ConnectivityOutOfRange { c: u32, n: usize },
    #[error("invalid round interval [{start}, {end}]")]
    InvalidInterval { start: u64, end: u64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("estimator vectors have lengths {0} and {1}")]
    LengthMismatch(usize, usize),
    #[error("node {0} received no messages")]
    EmptyInbox(NodeId),
    #[error("received messages of different algorithms: {0} and {1}")]
    MixedMessages(&'static str, &'static str),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("malformed message encoding: {0}")]
    Decode(String),
}

pub type Result<T> = std::result::Result<T, Error>;
