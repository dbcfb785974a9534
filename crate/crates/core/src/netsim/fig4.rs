//! Built-in five-node replay scenario.
//!
//! Node 2 heads a single cluster. Before node 2 initiates at t=3: node 1
//! sends to 2 (so 2 depends on 1), 4 sends to 1 (1 depends on 4), 5 sends
//! to 4 (4 depends on 5), and a message from 3 to 2 that left 3 before its
//! initial checkpoint creates no dependency. After the initiation node 2
//! sends to 4, which reaches 4 before its request and makes it take a
//! mutable checkpoint, and node 1 sends to 3, which has sent nothing and so
//! only advances its csn.

use crate::netsim::scenario::{EventKind, ScenarioConfig};
use crate::topology::{AdHocGraph, NodeId};

pub const EDGES: [(u32, u32); 7] = [(1, 2), (2, 3), (2, 4), (2, 5), (1, 3), (3, 4), (4, 5)];

fn send(from: u32, to: u32, payload: &str) -> EventKind {
    EventKind::SendApp {
        from: NodeId(from),
        to: NodeId(to),
        payload: payload.into(),
        pre_initial: false,
    }
}

pub fn scenario() -> ScenarioConfig {
    let graph = AdHocGraph::build(5, &EDGES).expect("valid graph");
    let mut c = ScenarioConfig::new(graph)
        .event(
            0,
            EventKind::SendApp {
                from: NodeId(3),
                to: NodeId(2),
                payload: "m0".into(),
                pre_initial: true,
            },
        )
        .event(0, send(1, 2, "m1"))
        .event(0, send(4, 1, "m2"))
        .event(0, send(5, 4, "m3"))
        .event(3, EventKind::Initiate { node: NodeId(2) })
        .event(4, send(2, 4, "m5"))
        .event(5, send(1, 3, "m4"));
    c.seed = 4;
    c
}
