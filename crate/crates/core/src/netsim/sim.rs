//! The event loop.
//!
//! Items are ordered by `(time, insertion counter)`. Scenario events are
//! inserted first, so at equal times they run before message arrivals.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use thiserror::Error;

use crate::netsim::scenario::{EventKind, ScenarioConfig, Time};
use crate::netsim::trace::{Detail, EntryKind, Snapshot, Trace, TraceEntry};
use crate::protocol::{
    AppMessage, IterationId, Message, Mode, ProcessState, ProtocolError, ProtocolEvent, StepOutput,
};
use crate::topology::{classify_gateways, elect_clusterheads, ClusterAssignment, NodeId};

/// Deliberate protocol defects, used to check that the oracles notice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mutant {
    /// Application messages wait while the receiver is in the
    /// checkpointing state instead of being processed on delivery.
    BlockAppDuringCState,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimOptions {
    pub mode: Mode,
    pub mutant: Option<Mutant>,
}

#[derive(Debug, Error)]
pub enum RestoreError {
    #[error("node {0} has no setup record in the trace")]
    UnknownNode(NodeId),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

pub fn run(config: &ScenarioConfig) -> Trace {
    run_with(config, &SimOptions::default())
}

/// Same transport and commit rounds, but every initiation asks the whole
/// cluster to checkpoint.
pub fn run_all_process_baseline(config: &ScenarioConfig) -> Trace {
    run_with(
        config,
        &SimOptions {
            mode: Mode::AllProcess,
            mutant: None,
        },
    )
}

pub fn run_with(config: &ScenarioConfig, opts: &SimOptions) -> Trace {
    let mut sim = Sim::new(config, *opts);
    sim.setup();
    while let Some(((time, _), item)) = sim.queue.pop_first() {
        sim.now = time;
        sim.handle(item);
    }
    sim.finish();
    Trace {
        scenario_hash: config.hash(),
        entries: sim.entries,
    }
}

enum Wire {
    Cluster(Message),
    Foreign {
        payload: String,
        pb_own_csn: u32,
        pb_c_state: bool,
    },
}

struct Parcel {
    id: u64,
    src: NodeId,
    dst: NodeId,
    wire: Wire,
}

impl Parcel {
    fn is_app(&self) -> bool {
        match &self.wire {
            Wire::Cluster(m) => m.is_app(),
            Wire::Foreign { .. } => true,
        }
    }
}

enum Input {
    Local(EventKind),
    Arrive(Parcel),
}

enum Item {
    Scenario(EventKind),
    Arrive(Parcel),
    BusyEnd(NodeId),
    Reconnect(NodeId),
}

struct Sim<'a> {
    config: &'a ScenarioConfig,
    opts: SimOptions,
    assignment: ClusterAssignment,
    /// Ascending members of each cluster, keyed by head.
    members: BTreeMap<NodeId, Vec<NodeId>>,
    states: BTreeMap<NodeId, ProcessState>,
    queue: BTreeMap<(Time, u64), Item>,
    qseq: u64,
    next_msg: u64,
    now: Time,
    entries: Vec<TraceEntry>,
    busy_until: BTreeMap<NodeId, Time>,
    offline_until: BTreeMap<NodeId, Time>,
    /// Inputs waiting for a busy node.
    backlog: BTreeMap<NodeId, VecDeque<Input>>,
    /// Messages for a disconnected node, held until it reconnects.
    parked: BTreeMap<NodeId, VecDeque<Parcel>>,
    /// Application messages held back by the blocking mutant.
    held: BTreeMap<NodeId, VecDeque<Parcel>>,
    last_arrival: BTreeMap<(NodeId, NodeId), Time>,
}

fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::MinimumProcess => "MinimumProcess",
        Mode::AllProcess => "AllProcess",
    }
}

impl<'a> Sim<'a> {
    fn new(config: &'a ScenarioConfig, opts: SimOptions) -> Self {
        let g = &config.graph;
        let assignment = classify_gateways(g, &elect_clusterheads(g));
        let mut members: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
        for (&x, &h) in &assignment.cluster_of {
            members.entry(h).or_default().push(x);
        }
        let mut states = BTreeMap::new();
        for (&h, list) in &members {
            let n = list.len() as u32;
            let local_head =
                NodeId(list.iter().position(|&x| x == h).expect("head in cluster") as u32 + 1);
            for (i, &x) in list.iter().enumerate() {
                let s = ProcessState::new(NodeId(i as u32 + 1), n)
                    .expect("rank in range")
                    .with_head(local_head)
                    .with_mode(opts.mode);
                states.insert(x, s);
            }
        }
        Self {
            config,
            opts,
            assignment,
            members,
            states,
            queue: BTreeMap::new(),
            qseq: 0,
            next_msg: 1,
            now: 0,
            entries: Vec::new(),
            busy_until: BTreeMap::new(),
            offline_until: BTreeMap::new(),
            backlog: BTreeMap::new(),
            parked: BTreeMap::new(),
            held: BTreeMap::new(),
            last_arrival: BTreeMap::new(),
        }
    }

    fn push(&mut self, at: Time, item: Item) {
        self.queue.insert((at, self.qseq), item);
        self.qseq += 1;
    }

    fn log(&mut self, node: NodeId, kind: EntryKind, detail: Detail) {
        self.entries.push(TraceEntry {
            seq: self.entries.len() as u64 + 1,
            time: self.now,
            node,
            kind,
            detail,
        });
    }

    fn cluster(&self, x: NodeId) -> &[NodeId] {
        let h = self.assignment.head_of(x).expect("node is clustered");
        &self.members[&h]
    }

    fn to_global(&self, within: NodeId, local: NodeId) -> NodeId {
        self.cluster(within)[(local.0 - 1) as usize]
    }

    fn to_local(&self, x: NodeId) -> NodeId {
        let pos = self
            .cluster(x)
            .iter()
            .position(|&y| y == x)
            .expect("member");
        NodeId(pos as u32 + 1)
    }

    fn global_iteration(&self, within: NodeId, it: IterationId) -> IterationId {
        IterationId {
            initiator: self.to_global(within, it.initiator),
            csn: it.csn,
        }
    }

    fn global_set(&self, within: NodeId, set: &BTreeSet<NodeId>) -> Vec<NodeId> {
        set.iter().map(|&k| self.to_global(within, k)).collect()
    }

    fn setup(&mut self) {
        let hash = self.config.hash();
        let nodes: Vec<NodeId> = self.config.graph.nodes().collect();
        for x in nodes {
            let detail = Detail {
                role: self.assignment.role.get(&x).copied(),
                cluster_of: self.assignment.head_of(x),
                set: Some(self.cluster(x).to_vec()),
                scenario: Some(hash.clone()),
                label: Some(mode_name(self.opts.mode).to_string()),
                note: self.opts.mutant.map(|m| format!("{m:?}")),
                ..Detail::default()
            };
            self.log(x, EntryKind::Setup, detail);
        }
        for ev in &self.config.events {
            self.queue
                .insert((ev.at, self.qseq), Item::Scenario(ev.kind.clone()));
            self.qseq += 1;
        }
    }

    fn finish(&mut self) {
        // Only the mutant can leave work behind: busy windows and
        // disconnections always end.
        let stuck: Vec<(NodeId, usize)> = self
            .held
            .iter()
            .map(|(k, v)| (*k, v.len()))
            .filter(|(_, n)| *n > 0)
            .collect();
        for (x, n) in stuck {
            self.log(
                x,
                EntryKind::Error,
                Detail {
                    note: Some(format!("{n} application messages never processed")),
                    ..Detail::default()
                },
            );
        }
        let finals: Vec<(NodeId, String)> =
            self.states.iter().map(|(&x, s)| (x, s.digest())).collect();
        for (x, digest) in finals {
            self.log(
                x,
                EntryKind::Final,
                Detail {
                    digest: Some(digest),
                    ..Detail::default()
                },
            );
        }
    }

    fn busy(&self, x: NodeId) -> bool {
        self.busy_until.get(&x).is_some_and(|&t| t > self.now)
    }

    /// Disconnected, or reconnecting with held messages not yet delivered.
    fn offline(&self, x: NodeId) -> bool {
        self.offline_until.get(&x).is_some_and(|&t| t > self.now)
            || self.parked.get(&x).is_some_and(|q| !q.is_empty())
    }

    /// A node with a backlog stays blocked until the backlog is drained, so
    /// later inputs cannot overtake earlier ones.
    fn blocked(&self, x: NodeId) -> bool {
        self.busy(x) || self.backlog.get(&x).is_some_and(|q| !q.is_empty())
    }

    fn handle(&mut self, item: Item) {
        match item {
            Item::Scenario(kind) => self.on_scenario(kind),
            Item::Arrive(p) => self.on_arrive(p),
            Item::BusyEnd(x) => {
                if !self.busy(x) {
                    self.drain(x);
                }
            }
            Item::Reconnect(x) => {
                if self.offline_until.get(&x).is_some_and(|&t| t <= self.now) {
                    while let Some(p) = self.parked.get_mut(&x).and_then(VecDeque::pop_front) {
                        self.deliver(p);
                    }
                }
            }
        }
    }

    fn on_scenario(&mut self, kind: EventKind) {
        match kind {
            EventKind::BusyWindow { node, duration } => {
                self.log(
                    node,
                    EntryKind::BusyWindow,
                    Detail {
                        duration: Some(duration),
                        ..Detail::default()
                    },
                );
                let end = self.now + duration;
                let e = self.busy_until.entry(node).or_insert(0);
                *e = (*e).max(end);
                self.push(end, Item::BusyEnd(node));
            }
            EventKind::Disconnect { node, until } => {
                self.log(
                    node,
                    EntryKind::Disconnect,
                    Detail {
                        duration: Some(until - self.now),
                        ..Detail::default()
                    },
                );
                let e = self.offline_until.entry(node).or_insert(0);
                *e = (*e).max(until);
                self.push(until, Item::Reconnect(node));
            }
            EventKind::Fail { node } => self.fail(node),
            local => {
                let x = local.actor();
                if self.blocked(x) {
                    self.backlog
                        .entry(x)
                        .or_default()
                        .push_back(Input::Local(local));
                } else {
                    self.exec_local(x, local);
                    self.release_held(x);
                }
            }
        }
    }

    fn fail(&mut self, node: NodeId) {
        let restored = restore_from(&self.entries, node);
        let snapshot = latest_permanent_snapshot(&self.entries, node);
        match restored {
            Ok(state) => {
                let app = state.app;
                self.states.insert(node, state);
                self.log(
                    node,
                    EntryKind::Fail,
                    Detail {
                        app: Some(app),
                        snapshot,
                        ..Detail::default()
                    },
                );
            }
            Err(e) => self.error(node, e.to_string()),
        }
    }

    fn error(&mut self, node: NodeId, note: String) {
        self.log(
            node,
            EntryKind::Error,
            Detail {
                note: Some(note),
                ..Detail::default()
            },
        );
    }

    fn on_arrive(&mut self, p: Parcel) {
        let dst = p.dst;
        if self.offline(dst) {
            self.parked.entry(dst).or_default().push_back(p);
            return;
        }
        self.deliver(p);
    }

    fn deliver(&mut self, p: Parcel) {
        let dst = p.dst;
        self.log_deliver(&p);
        if self.blocked(dst) {
            self.backlog
                .entry(dst)
                .or_default()
                .push_back(Input::Arrive(p));
            return;
        }
        self.accept(p);
        self.release_held(dst);
    }

    /// Hands a delivered message to the node, unless the mutant holds it.
    fn accept(&mut self, p: Parcel) {
        let dst = p.dst;
        let hold = self.opts.mutant == Some(Mutant::BlockAppDuringCState)
            && p.is_app()
            && (self.states[&dst].c_state || self.held.get(&dst).is_some_and(|q| !q.is_empty()));
        if hold {
            self.held.entry(dst).or_default().push_back(p);
        } else {
            self.process(p);
        }
    }

    fn release_held(&mut self, x: NodeId) {
        while !self.states[&x].c_state {
            let Some(p) = self.held.get_mut(&x).and_then(VecDeque::pop_front) else {
                break;
            };
            self.process(p);
        }
    }

    fn drain(&mut self, x: NodeId) {
        while let Some(input) = self.backlog.get_mut(&x).and_then(VecDeque::pop_front) {
            match input {
                Input::Arrive(p) => self.accept(p),
                Input::Local(kind) => self.exec_local(x, kind),
            }
            self.release_held(x);
        }
    }

    fn log_deliver(&mut self, p: &Parcel) {
        let mut detail = Detail {
            msg: Some(p.id),
            peer: Some(p.src),
            ..Detail::default()
        };
        match &p.wire {
            Wire::Cluster(m) => {
                detail.label = Some(m.label().to_string());
                detail.iteration = m.iteration().map(|it| self.global_iteration(p.dst, it));
            }
            Wire::Foreign { .. } => {
                detail.label = Some("App".into());
                detail.foreign = Some(true);
            }
        }
        self.log(p.dst, EntryKind::Deliver, detail);
    }

    fn process(&mut self, p: Parcel) {
        let x = p.dst;
        match p.wire {
            Wire::Cluster(msg) => {
                let result = self.states.get_mut(&x).expect("state").receive(&msg);
                match result {
                    Ok(out) => {
                        self.log_events(x, &out.events);
                        if msg.is_app() {
                            self.log_process(x, p.id, p.src, false);
                        }
                        self.dispatch(x, out.outbound);
                    }
                    Err(e) => self.error(x, e.to_string()),
                }
            }
            Wire::Foreign { payload, .. } => {
                self.states
                    .get_mut(&x)
                    .expect("state")
                    .absorb_foreign(p.src, &payload);
                self.log_process(x, p.id, p.src, true);
            }
        }
    }

    fn log_process(&mut self, x: NodeId, id: u64, src: NodeId, foreign: bool) {
        let detail = Detail {
            msg: Some(id),
            label: Some("App".into()),
            peer: Some(src),
            foreign: foreign.then_some(true),
            app: Some(self.states[&x].app),
            ..Detail::default()
        };
        self.log(x, EntryKind::Process, detail);
    }

    fn exec_local(&mut self, x: NodeId, kind: EventKind) {
        let result: Result<StepOutput, ProtocolError> = match kind {
            EventKind::SendApp {
                to,
                payload,
                pre_initial,
                ..
            } => {
                if !self.assignment.same_cluster(x, to) {
                    self.send_foreign(x, to, payload, pre_initial);
                    return;
                }
                let local_to = self.to_local(to);
                if pre_initial {
                    let src = self.to_local(x);
                    let m = AppMessage {
                        src,
                        dst: local_to,
                        payload,
                        pb_own_csn: 0,
                        pb_c_state: false,
                    };
                    self.send_parcel(x, to, Wire::Cluster(Message::App(m)), true);
                    return;
                }
                self.states
                    .get_mut(&x)
                    .expect("state")
                    .send_app_message(local_to, payload)
            }
            EventKind::Initiate { .. } => self
                .states
                .get_mut(&x)
                .expect("state")
                .initiate_checkpoint(),
            EventKind::Abort { .. } => self.states.get_mut(&x).expect("state").abort_iteration(),
            other => unreachable!("{other:?} is not a local action"),
        };
        match result {
            Ok(out) => {
                self.log_events(x, &out.events);
                self.dispatch(x, out.outbound);
            }
            Err(e) => self.error(x, e.to_string()),
        }
    }

    fn send_foreign(&mut self, x: NodeId, to: NodeId, payload: String, pre_initial: bool) {
        let (pb_own_csn, pb_c_state) = if pre_initial {
            (0, false)
        } else {
            self.states[&x].stamp_foreign()
        };
        let wire = Wire::Foreign {
            payload,
            pb_own_csn,
            pb_c_state,
        };
        self.send_parcel(x, to, wire, pre_initial);
    }

    fn dispatch(&mut self, x: NodeId, outbound: Vec<(NodeId, Message)>) {
        for (local_to, msg) in outbound {
            let to = self.to_global(x, local_to);
            self.send_parcel(x, to, Wire::Cluster(msg), false);
        }
    }

    fn send_parcel(&mut self, src: NodeId, dst: NodeId, wire: Wire, pre_initial: bool) {
        let id = self.next_msg;
        self.next_msg += 1;
        let route = self.route(src, dst);
        let mut detail = Detail {
            msg: Some(id),
            peer: Some(dst),
            pre_initial: pre_initial.then_some(true),
            route: route.clone(),
            ..Detail::default()
        };
        let kind = match &wire {
            Wire::Cluster(m) => {
                detail.label = Some(m.label().to_string());
                self.describe(src, m, &mut detail);
                EntryKind::for_send(m.label())
            }
            Wire::Foreign {
                payload,
                pb_own_csn,
                pb_c_state,
            } => {
                detail.label = Some("App".into());
                detail.foreign = Some(true);
                detail.payload = Some(payload.clone());
                detail.pb_own_csn = Some(*pb_own_csn);
                detail.pb_c_state = Some(*pb_c_state);
                EntryKind::Send
            }
        };
        self.log(src, kind, detail);
        let Some(route) = route else {
            self.error(src, format!("message {id}: no route from {src} to {dst}"));
            return;
        };
        let latency: Time = route
            .windows(2)
            .map(|w| self.config.link_latency(w[0], w[1]))
            .sum();
        // A disconnected sender's messages leave when it reconnects.
        let depart = self
            .now
            .max(self.offline_until.get(&src).copied().unwrap_or(0));
        let key = (src, dst);
        let at = (depart + latency).max(self.last_arrival.get(&key).copied().unwrap_or(0));
        self.last_arrival.insert(key, at);
        self.push(at, Item::Arrive(Parcel { id, src, dst, wire }));
    }

    fn describe(&self, src: NodeId, m: &Message, d: &mut Detail) {
        match m {
            Message::App(a) => {
                d.payload = Some(a.payload.clone());
                d.pb_own_csn = Some(a.pb_own_csn);
                d.pb_c_state = Some(a.pb_c_state);
            }
            Message::PrimaryRequest(r)
            | Message::SecondaryRequest(r)
            | Message::PropagatedRequest(r) => {
                d.iteration = Some(self.global_iteration(src, r.iteration()));
                d.set = Some(self.global_set(src, &r.known_minset));
            }
            Message::Ack(a) => {
                d.iteration = Some(self.global_iteration(src, a.iteration));
                d.set = Some(self.global_set(src, &a.extra_dependents));
                d.ckpt_seq = Some(a.ckpt_csn);
            }
            Message::Commit(c) => {
                d.iteration = Some(self.global_iteration(src, c.iteration));
                d.set = Some(self.global_set(src, &c.minimum_set));
            }
            Message::Abort(a) => {
                d.iteration = Some(self.global_iteration(src, a.iteration));
            }
        }
    }

    /// Hop sequence from `src` to `dst`. Inside a cluster a message goes
    /// direct between neighbors and through the clusterhead otherwise;
    /// between clusters it travels source, own head, shortest path to the
    /// destination head, destination.
    fn route(&self, src: NodeId, dst: NodeId) -> Option<Vec<NodeId>> {
        let g = &self.config.graph;
        if g.are_adjacent(src, dst) && self.assignment.same_cluster(src, dst) {
            return Some(vec![src, dst]);
        }
        let hs = self.assignment.head_of(src)?;
        let hd = self.assignment.head_of(dst)?;
        let mut path = vec![src];
        for x in g.shortest_path(hs, hd)? {
            if path.last() != Some(&x) {
                path.push(x);
            }
        }
        if path.last() != Some(&dst) {
            path.push(dst);
        }
        Some(path)
    }

    fn log_events(&mut self, x: NodeId, events: &[ProtocolEvent]) {
        for ev in events {
            let (kind, detail) = match ev {
                ProtocolEvent::CheckpointTaken {
                    checkpoint,
                    restore,
                } => (
                    EntryKind::CheckpointTaken,
                    Detail {
                        ckpt_kind: Some(checkpoint.kind),
                        ckpt_seq: Some(checkpoint.seq),
                        iteration: checkpoint.iteration.map(|it| self.global_iteration(x, it)),
                        set: Some(self.global_set(x, &checkpoint.dependents())),
                        app: Some(checkpoint.app_state),
                        snapshot: Some(Snapshot {
                            checkpoint: checkpoint.clone(),
                            point: restore.clone(),
                        }),
                        ..Detail::default()
                    },
                ),
                ProtocolEvent::CheckpointPromoted { seq, to, iteration } => (
                    EntryKind::CheckpointPromoted,
                    Detail {
                        ckpt_kind: Some(*to),
                        ckpt_seq: Some(*seq),
                        iteration: Some(self.global_iteration(x, *iteration)),
                        ..Detail::default()
                    },
                ),
                ProtocolEvent::CheckpointDiscarded {
                    seq,
                    kind,
                    iteration,
                } => (
                    EntryKind::CheckpointDiscarded,
                    Detail {
                        ckpt_kind: Some(*kind),
                        ckpt_seq: Some(*seq),
                        iteration: iteration.map(|it| self.global_iteration(x, it)),
                        ..Detail::default()
                    },
                ),
                ProtocolEvent::CsnAdvanced { csn } => (
                    EntryKind::CsnUpdate,
                    Detail {
                        csn: Some(*csn),
                        note: Some("own".into()),
                        ..Detail::default()
                    },
                ),
                ProtocolEvent::KnownCsn { peer, csn } => (
                    EntryKind::CsnUpdate,
                    Detail {
                        peer: Some(self.to_global(x, *peer)),
                        csn: Some(*csn),
                        ..Detail::default()
                    },
                ),
                ProtocolEvent::DvSet { peer, csn } => (
                    EntryKind::DvUpdate,
                    Detail {
                        peer: Some(self.to_global(x, *peer)),
                        csn: Some(*csn),
                        note: Some("set".into()),
                        ..Detail::default()
                    },
                ),
                ProtocolEvent::DvCleared { peer } => (
                    EntryKind::DvUpdate,
                    Detail {
                        peer: Some(self.to_global(x, *peer)),
                        note: Some("clear".into()),
                        ..Detail::default()
                    },
                ),
                ProtocolEvent::Ignored { reason } => (
                    EntryKind::Ignored,
                    Detail {
                        note: Some(reason.clone()),
                        ..Detail::default()
                    },
                ),
                ProtocolEvent::IterationStarted { iteration, minset } => (
                    EntryKind::Initiated,
                    Detail {
                        iteration: Some(self.global_iteration(x, *iteration)),
                        set: Some(self.global_set(x, minset)),
                        ..Detail::default()
                    },
                ),
                ProtocolEvent::IterationCommitted {
                    iteration,
                    minimum_set,
                } => (
                    EntryKind::Committed,
                    Detail {
                        iteration: Some(self.global_iteration(x, *iteration)),
                        set: Some(self.global_set(x, minimum_set)),
                        ..Detail::default()
                    },
                ),
                ProtocolEvent::IterationAborted { iteration } => (
                    EntryKind::Aborted,
                    Detail {
                        iteration: Some(self.global_iteration(x, *iteration)),
                        ..Detail::default()
                    },
                ),
            };
            self.log(x, kind, detail);
        }
    }
}

struct SetupInfo {
    local: NodeId,
    n: u32,
    local_head: NodeId,
    mode: Mode,
}

fn setup_info(entries: &[TraceEntry], node: NodeId) -> Option<SetupInfo> {
    let e = entries
        .iter()
        .find(|e| e.kind == EntryKind::Setup && e.node == node)?;
    let members = e.detail.set.as_ref()?;
    let head = e.detail.cluster_of?;
    let rank = |x: NodeId| {
        members
            .iter()
            .position(|&y| y == x)
            .map(|p| NodeId(p as u32 + 1))
    };
    let mode = match e.detail.label.as_deref() {
        Some("AllProcess") => Mode::AllProcess,
        _ => Mode::MinimumProcess,
    };
    Some(SetupInfo {
        local: rank(node)?,
        n: members.len() as u32,
        local_head: rank(head)?,
        mode,
    })
}

/// Snapshot of the node's latest permanent checkpoint, `None` when the
/// node has only its initial state to fall back to.
fn latest_permanent_snapshot(entries: &[TraceEntry], node: NodeId) -> Option<Snapshot> {
    let mut taken: BTreeMap<u32, Snapshot> = BTreeMap::new();
    let mut latest = None;
    for e in entries.iter().filter(|e| e.node == node) {
        match e.kind {
            EntryKind::CheckpointTaken => {
                if let (Some(seq), Some(s)) = (e.detail.ckpt_seq, &e.detail.snapshot) {
                    taken.insert(seq, s.clone());
                }
            }
            EntryKind::CheckpointPromoted
                if e.detail.ckpt_kind == Some(crate::protocol::CheckpointKind::Permanent) =>
            {
                if let Some(seq) = e.detail.ckpt_seq {
                    latest = taken.get(&seq).cloned();
                }
            }
            EntryKind::Fail => latest = e.detail.snapshot.clone(),
            _ => {}
        }
    }
    latest
}

fn restore_from(entries: &[TraceEntry], node: NodeId) -> Result<ProcessState, RestoreError> {
    let info = setup_info(entries, node).ok_or(RestoreError::UnknownNode(node))?;
    match latest_permanent_snapshot(entries, node) {
        Some(s) => Ok(ProcessState::restored(
            info.local,
            info.n,
            Some(info.local_head),
            info.mode,
            &s.checkpoint,
            &s.point,
        )?),
        None => Ok(ProcessState::new(info.local, info.n)?
            .with_head(info.local_head)
            .with_mode(info.mode)),
    }
}

/// State of `node` as captured at its latest permanent checkpoint in the
/// trace, or its initial state when it has none. Ids inside the returned
/// state are cluster-local ranks.
pub fn restore_last_permanent(trace: &Trace, node: NodeId) -> Result<ProcessState, RestoreError> {
    restore_from(&trace.entries, node)
}
