//! Minimum-process, non-blocking coordinated checkpointing for clustered
//! mobile ad hoc networks.
//!
//! * [`topology`]: graph, clusterhead election and clustering checks.
//! * [`protocol`]: the per-node checkpointing state machine.
//! * [`netsim`]: scenario documents, the event loop and traces.
//! * [`verify`]: trace oracles independent of the protocol code.
//! * [`metrics`]: counts over traces, for comparing against the baseline.
//! * [`corpus`]: random scenario generation and sweeps.

pub mod corpus;
pub mod metrics;
pub mod netsim;
pub mod protocol;
pub mod topology;
pub mod verify;
