//! Simulation and verification of counter synchronization in synchronous
//! dynamic networks where nodes start at different rounds.
//!
//! - [`graph`]: digraphs on up to 64 nodes, products and connectivity.
//! - [`adversary`]: seeded graph sequences and window certification.
//! - [`randvar`]: rounded exponential estimators for network size.
//! - [`protocol`]: the per-node state machines and their messages.
//! - [`engine`]: the round loop and recorded traces.
//! - [`verifier`]: checks over traces.
//! - [`batch`]: repeated runs.

pub mod adversary;
pub mod batch;
pub mod engine;
pub mod error;
pub mod graph;
pub mod protocol;
pub mod randvar;
pub mod verifier;

pub use adversary::{Adversary, AdversaryKind, Certification, WindowClass};
pub use engine::{run, GraphSpec, Scenario, Trace};
pub use error::{Error, Result};
pub use graph::{Digraph, NodeId, NodeSet};
pub use protocol::{Algorithm, Message, NodeState, ProtocolParams};
pub use verifier::{Check, CheckOptions, Status, Verdict};
