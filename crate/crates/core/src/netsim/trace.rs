//! Trace records: one JSON object per line.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netsim::scenario::Time;
use crate::protocol::{AppState, Checkpoint, CheckpointKind, IterationId, RestorePoint};
use crate::topology::{NodeId, Role};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EntryKind {
    Setup,
    Send,
    Deliver,
    Process,
    CheckpointTaken,
    CheckpointPromoted,
    CheckpointDiscarded,
    RequestSent,
    AckSent,
    CommitSent,
    AbortSent,
    CsnUpdate,
    DvUpdate,
    Ignored,
    Initiated,
    Committed,
    Aborted,
    BusyWindow,
    Disconnect,
    Fail,
    Error,
    Final,
}

impl EntryKind {
    /// Kind of the entry recording the send of a message with this label.
    pub fn for_send(label: &str) -> Self {
        match label {
            "App" => EntryKind::Send,
            "Ack" => EntryKind::AckSent,
            "Commit" => EntryKind::CommitSent,
            "Abort" => EntryKind::AbortSent,
            _ => EntryKind::RequestSent,
        }
    }
}

/// Checkpoint contents needed to restart a node from it. Ids inside are
/// cluster-local ranks (position in the cluster's ascending member list).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snapshot {
    pub checkpoint: Checkpoint,
    pub point: RestorePoint,
}

macro_rules! detail_struct {
    ($($(#[$m:meta])* $field:ident : $ty:ty),* $(,)?) => {
        /// Structured payload of a trace entry; every field is optional and
        /// omitted from the record when absent.
        #[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
        pub struct Detail {
            $(
                $(#[$m])*
                #[serde(default, skip_serializing_if = "Option::is_none")]
                pub $field: Option<$ty>,
            )*
        }
    };
}

detail_struct! {
    /// Message id, unique per run.
    msg: u64,
    /// Message label (`App`, `PrimaryRequest`, `Ack`, ...).
    label: String,
    /// The other endpoint: receiver on sends, sender on deliveries.
    peer: NodeId,
    payload: String,
    pb_own_csn: u32,
    pb_c_state: bool,
    pre_initial: bool,
    /// Sender and receiver are in different clusters.
    foreign: bool,
    iteration: IterationId,
    /// Node set: known minimum set, extra dependents, committed minimum
    /// set, checkpoint dependents or cluster members, depending on kind.
    set: Vec<NodeId>,
    ckpt_kind: CheckpointKind,
    ckpt_seq: u32,
    csn: u32,
    duration: Time,
    role: Role,
    cluster_of: NodeId,
    scenario: String,
    digest: String,
    app: AppState,
    snapshot: Snapshot,
    route: Vec<NodeId>,
    note: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub seq: u64,
    pub time: Time,
    pub node: NodeId,
    pub kind: EntryKind,
    pub detail: Detail,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("trace has no setup records")]
    MissingSetup,
    #[error("trace is truncated: no final records")]
    Truncated,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    pub scenario_hash: String,
    pub entries: Vec<TraceEntry>,
}

impl Trace {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("entry serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, TraceError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let e: TraceEntry = serde_json::from_str(line).map_err(|err| TraceError::Parse {
                line: i + 1,
                message: err.to_string(),
            })?;
            entries.push(e);
        }
        let scenario_hash = entries
            .iter()
            .find(|e| e.kind == EntryKind::Setup)
            .and_then(|e| e.detail.scenario.clone())
            .ok_or(TraceError::MissingSetup)?;
        Ok(Self {
            scenario_hash,
            entries,
        })
    }

    pub fn is_complete(&self) -> bool {
        self.entries.iter().any(|e| e.kind == EntryKind::Final)
    }

    /// Final per-node state digests.
    pub fn final_digests(&self) -> Vec<(NodeId, String)> {
        self.entries
            .iter()
            .filter(|e| e.kind == EntryKind::Final)
            .filter_map(|e| e.detail.digest.clone().map(|d| (e.node, d)))
            .collect()
    }

    pub fn of_kind(&self, kind: EntryKind) -> impl Iterator<Item = &TraceEntry> {
        self.entries.iter().filter(move |e| e.kind == kind)
    }

    /// Renumbers `seq` to match entry order, for hand-edited traces.
    pub fn renumber(&mut self) {
        for (i, e) in self.entries.iter_mut().enumerate() {
            e.seq = i as u64 + 1;
        }
    }
}
