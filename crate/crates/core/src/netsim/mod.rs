//! Deterministic discrete-event simulation of one or more clusters.

pub mod fig4;
pub mod scenario;
pub mod sim;
pub mod trace;

pub use scenario::{
    load_graph, load_scenario, EventKind, ScenarioConfig, ScenarioError, ScenarioEvent, Time,
};
pub use sim::{
    restore_last_permanent, run, run_all_process_baseline, run_with, Mutant, RestoreError,
    SimOptions,
};
pub use trace::{Detail, EntryKind, Snapshot, Trace, TraceEntry, TraceError};
