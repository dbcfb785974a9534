//! Scenario documents: a JSON object with `n`, `edges`, `seed`,
//! `default_latency`, optional `per_link_latency` triples `[a, b, ticks]`
//! and a list of timed `events`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::topology::{AdHocGraph, NodeId, TopologyError};

pub type Time = u64;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid graph: {0}")]
    Graph(#[from] TopologyError),
    #[error("event {index}: unknown node {node}")]
    UnknownNode { index: usize, node: u32 },
    #[error("event {index}: negative time {at}")]
    NegativeTime { index: usize, at: i64 },
    #[error("event {index}: {reason}")]
    InvalidEvent { index: usize, reason: String },
    #[error("per_link_latency entry ({0}, {1}) is not an edge")]
    UnknownLink(u32, u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum EventKind {
    SendApp {
        from: NodeId,
        to: NodeId,
        #[serde(default)]
        payload: String,
        /// The message was sent before the sender's initial checkpoint and
        /// is still in the channel when the run starts.
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        pre_initial: bool,
    },
    Initiate {
        node: NodeId,
    },
    Abort {
        node: NodeId,
    },
    BusyWindow {
        node: NodeId,
        duration: Time,
    },
    Disconnect {
        node: NodeId,
        until: Time,
    },
    Fail {
        node: NodeId,
    },
}

impl EventKind {
    pub fn nodes(&self) -> Vec<NodeId> {
        match self {
            EventKind::SendApp { from, to, .. } => vec![*from, *to],
            EventKind::Initiate { node }
            | EventKind::Abort { node }
            | EventKind::BusyWindow { node, .. }
            | EventKind::Disconnect { node, .. }
            | EventKind::Fail { node } => vec![*node],
        }
    }

    /// The node whose local action this event is.
    pub fn actor(&self) -> NodeId {
        match self {
            EventKind::SendApp { from, .. } => *from,
            other => other.nodes()[0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioEvent {
    pub at: Time,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub graph: AdHocGraph,
    pub seed: u64,
    pub default_latency: Time,
    pub per_link_latency: BTreeMap<(NodeId, NodeId), Time>,
    pub events: Vec<ScenarioEvent>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawEvent {
    at: i64,
    #[serde(flatten)]
    kind: EventKind,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawScenario {
    n: u32,
    #[serde(default)]
    edges: Vec<(u32, u32)>,
    #[serde(default)]
    seed: u64,
    #[serde(default = "one")]
    default_latency: Time,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    per_link_latency: Vec<(u32, u32, Time)>,
    #[serde(default)]
    events: Vec<RawEvent>,
}

fn one() -> Time {
    1
}

/// Only the graph part of a scenario document; everything else is ignored.
#[derive(Debug, Deserialize)]
struct RawGraph {
    n: u32,
    #[serde(default)]
    edges: Vec<(u32, u32)>,
}

fn parse_error(e: serde_json::Error) -> ScenarioError {
    ScenarioError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

pub fn load_graph(text: &str) -> Result<AdHocGraph, ScenarioError> {
    let raw: RawGraph = serde_json::from_str(text).map_err(parse_error)?;
    Ok(AdHocGraph::build(raw.n, &raw.edges)?)
}

pub fn load_scenario(text: &str) -> Result<ScenarioConfig, ScenarioError> {
    let raw: RawScenario = serde_json::from_str(text).map_err(parse_error)?;
    let graph = AdHocGraph::build(raw.n, &raw.edges)?;
    let mut per_link_latency = BTreeMap::new();
    for (a, b, t) in raw.per_link_latency {
        if !graph.are_adjacent(NodeId(a), NodeId(b)) {
            return Err(ScenarioError::UnknownLink(a, b));
        }
        per_link_latency.insert((NodeId(a.min(b)), NodeId(a.max(b))), t);
    }
    let mut events = Vec::with_capacity(raw.events.len());
    for (index, ev) in raw.events.into_iter().enumerate() {
        if ev.at < 0 {
            return Err(ScenarioError::NegativeTime { index, at: ev.at });
        }
        for x in ev.kind.nodes() {
            if !graph.contains(x) {
                return Err(ScenarioError::UnknownNode { index, node: x.0 });
            }
        }
        match &ev.kind {
            EventKind::SendApp { from, to, .. } if from == to => {
                return Err(ScenarioError::InvalidEvent {
                    index,
                    reason: "sender and receiver are the same node".into(),
                });
            }
            EventKind::Disconnect { until, .. } if (*until as i64) < ev.at => {
                return Err(ScenarioError::InvalidEvent {
                    index,
                    reason: "reconnect time precedes disconnect".into(),
                });
            }
            _ => {}
        }
        events.push(ScenarioEvent {
            at: ev.at as Time,
            kind: ev.kind,
        });
    }
    Ok(ScenarioConfig {
        graph,
        seed: raw.seed,
        default_latency: raw.default_latency,
        per_link_latency,
        events,
    })
}

impl ScenarioConfig {
    pub fn new(graph: AdHocGraph) -> Self {
        Self {
            graph,
            seed: 0,
            default_latency: 1,
            per_link_latency: BTreeMap::new(),
            events: Vec::new(),
        }
    }

    pub fn event(mut self, at: Time, kind: EventKind) -> Self {
        self.events.push(ScenarioEvent { at, kind });
        self
    }

    pub fn link_latency(&self, a: NodeId, b: NodeId) -> Time {
        self.per_link_latency
            .get(&(a.min(b), a.max(b)))
            .copied()
            .unwrap_or(self.default_latency)
    }

    pub fn to_json(&self) -> String {
        let raw = RawScenario {
            n: self.graph.n(),
            edges: self.graph.edges(),
            seed: self.seed,
            default_latency: self.default_latency,
            per_link_latency: self
                .per_link_latency
                .iter()
                .map(|(&(a, b), &t)| (a.0, b.0, t))
                .collect(),
            events: self
                .events
                .iter()
                .map(|e| RawEvent {
                    at: e.at as i64,
                    kind: e.kind.clone(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&raw).expect("scenario serializes")
    }

    /// Hash of the canonical document, identifying the scenario in traces.
    pub fn hash(&self) -> String {
        let hash = Sha256::digest(self.to_json().as_bytes());
        hash[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_document() {
        let c = load_scenario(r#"{"n": 1}"#).unwrap();
        assert_eq!(c.graph.n(), 1);
        assert!(c.events.is_empty());
        assert_eq!(c.default_latency, 1);
    }

    #[test]
    fn unknown_node_rejected() {
        let doc =
            r#"{"n": 5, "edges": [[1,2]], "events": [{"at": 0, "kind": "Initiate", "node": 9}]}"#;
        assert!(matches!(
            load_scenario(doc),
            Err(ScenarioError::UnknownNode { index: 0, node: 9 })
        ));
    }

    #[test]
    fn negative_time_rejected() {
        let doc =
            r#"{"n": 2, "edges": [[1,2]], "events": [{"at": -3, "kind": "Initiate", "node": 1}]}"#;
        assert!(matches!(
            load_scenario(doc),
            Err(ScenarioError::NegativeTime { index: 0, at: -3 })
        ));
    }

    #[test]
    fn parse_error_has_position() {
        let err = load_scenario("{\n  \"n\": 2,\n  \"edges\": [[1,2]\n}").unwrap_err();
        let ScenarioError::Parse { line, .. } = err else {
            panic!("{err}")
        };
        assert_eq!(line, 4);
    }

    #[test]
    fn bad_graph_and_links() {
        assert!(matches!(
            load_scenario(r#"{"n": 2, "edges": [[1,1]]}"#),
            Err(ScenarioError::Graph(TopologyError::SelfLoop(1)))
        ));
        assert!(matches!(
            load_scenario(r#"{"n": 3, "edges": [[1,2]], "per_link_latency": [[1,3,2]]}"#),
            Err(ScenarioError::UnknownLink(1, 3))
        ));
    }

    #[test]
    fn document_round_trips() {
        let doc = r#"{"n": 3, "edges": [[1,2],[2,3]], "seed": 7, "default_latency": 2,
            "per_link_latency": [[3,2,5]],
            "events": [{"at": 1, "kind": "SendApp", "from": 1, "to": 3, "payload": "p"},
                       {"at": 2, "kind": "BusyWindow", "node": 2, "duration": 3},
                       {"at": 4, "kind": "Initiate", "node": 2}]}"#;
        let c = load_scenario(doc).unwrap();
        assert_eq!(c.link_latency(NodeId(2), NodeId(3)), 5);
        assert_eq!(c.link_latency(NodeId(1), NodeId(2)), 2);
        let again = load_scenario(&c.to_json()).unwrap();
        assert_eq!(again.to_json(), c.to_json());
        assert_eq!(again.hash(), c.hash());
    }
}
