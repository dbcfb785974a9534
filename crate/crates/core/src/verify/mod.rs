//! Trace oracles.
//!
//! Everything here works from trace records alone and shares no logic with
//! the protocol module. Before/after is judged by record order (`seq`).

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::netsim::{EntryKind, Time, Trace, TraceEntry};
use crate::protocol::{CheckpointKind, IterationId};
use crate::topology::NodeId;

pub mod mutate;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VerifyError {
    #[error("iteration {0} does not appear in the trace")]
    UnknownIteration(IterationId),
    #[error("iteration {0} was aborted")]
    Aborted(IterationId),
    #[error("iteration {0} never committed")]
    NotCommitted(IterationId),
}

/// Where a node's cut lies: the record that captured the checkpoint, or
/// position 0 for the initial state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CutPoint {
    pub position: u64,
    pub ckpt_seq: Option<u32>,
}

impl CutPoint {
    pub const INITIAL: CutPoint = CutPoint {
        position: 0,
        ckpt_seq: None,
    };
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GlobalSnapshot {
    pub iteration: IterationId,
    pub cut: BTreeMap<NodeId, CutPoint>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Orphan {
    pub msg: u64,
    pub sender: NodeId,
    pub receiver: NodeId,
    pub send_seq: u64,
    pub deliver_seq: u64,
    pub sender_cut: u64,
    pub receiver_cut: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct OrphanReport {
    pub orphans: Vec<Orphan>,
}

impl OrphanReport {
    pub fn is_empty(&self) -> bool {
        self.orphans.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BlockingViolation {
    pub msg: u64,
    pub node: NodeId,
    pub deliver_time: Option<Time>,
    pub process_time: Option<Time>,
    /// Part of the delay not covered by a declared busy window.
    pub undeclared: Time,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExtraCheckpoint {
    pub node: NodeId,
    pub iteration: IterationId,
    pub surviving: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MissingAck {
    pub iteration: IterationId,
    pub member: NodeId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IdleMember {
    pub iteration: IterationId,
    pub member: NodeId,
}

struct Capture {
    position: u64,
    seq: u32,
    iteration: Option<IterationId>,
    permanent_for: Option<IterationId>,
    discarded: bool,
}

struct AppSend {
    position: u64,
    src: NodeId,
    dst: NodeId,
    pre_initial: bool,
}

struct Commit {
    position: u64,
    initiator: NodeId,
    set: BTreeSet<NodeId>,
}

/// Everything the oracles need, gathered in one pass.
struct Index {
    members: BTreeMap<NodeId, Vec<NodeId>>,
    captures: BTreeMap<NodeId, Vec<Capture>>,
    committed: BTreeMap<IterationId, Commit>,
    commit_order: Vec<IterationId>,
    initiated: BTreeMap<IterationId, u64>,
    aborted: BTreeSet<IterationId>,
    sends: BTreeMap<u64, AppSend>,
    /// Processing record of each application message, falling back to the
    /// delivery record when the trace has no processing record.
    received: BTreeMap<u64, (u64, NodeId)>,
}

impl Index {
    fn build(entries: &[TraceEntry]) -> Self {
        let mut ix = Index {
            members: BTreeMap::new(),
            captures: BTreeMap::new(),
            committed: BTreeMap::new(),
            commit_order: Vec::new(),
            initiated: BTreeMap::new(),
            aborted: BTreeSet::new(),
            sends: BTreeMap::new(),
            received: BTreeMap::new(),
        };
        let mut delivered: BTreeMap<u64, (u64, NodeId)> = BTreeMap::new();
        for e in entries {
            let d = &e.detail;
            let is_app = d.label.as_deref() == Some("App") && d.foreign != Some(true);
            match e.kind {
                EntryKind::Setup => {
                    if let Some(set) = &d.set {
                        ix.members.insert(e.node, set.clone());
                    }
                }
                EntryKind::Send if is_app => {
                    if let (Some(msg), Some(dst)) = (d.msg, d.peer) {
                        ix.sends.insert(
                            msg,
                            AppSend {
                                position: e.seq,
                                src: e.node,
                                dst,
                                pre_initial: d.pre_initial == Some(true),
                            },
                        );
                    }
                }
                EntryKind::Deliver if is_app => {
                    if let Some(msg) = d.msg {
                        delivered.entry(msg).or_insert((e.seq, e.node));
                    }
                }
                EntryKind::Process if is_app => {
                    if let Some(msg) = d.msg {
                        ix.received.entry(msg).or_insert((e.seq, e.node));
                    }
                }
                EntryKind::CheckpointTaken => {
                    if let Some(seq) = d.ckpt_seq {
                        ix.captures.entry(e.node).or_default().push(Capture {
                            position: e.seq,
                            seq,
                            iteration: d.iteration,
                            permanent_for: None,
                            discarded: false,
                        });
                    }
                }
                EntryKind::CheckpointPromoted | EntryKind::CheckpointDiscarded => {
                    let Some(seq) = d.ckpt_seq else { continue };
                    let Some(c) = ix
                        .captures
                        .get_mut(&e.node)
                        .and_then(|v| v.iter_mut().rev().find(|c| c.seq == seq))
                    else {
                        continue;
                    };
                    if e.kind == EntryKind::CheckpointDiscarded {
                        c.discarded = true;
                    } else {
                        if d.iteration.is_some() {
                            c.iteration = d.iteration;
                        }
                        if d.ckpt_kind == Some(CheckpointKind::Permanent) {
                            c.permanent_for = d.iteration;
                        }
                    }
                }
                EntryKind::Initiated => {
                    if let Some(it) = d.iteration {
                        ix.initiated.entry(it).or_insert(e.seq);
                    }
                }
                EntryKind::Committed => {
                    if let Some(it) = d.iteration {
                        if !ix.committed.contains_key(&it) {
                            ix.commit_order.push(it);
                            ix.committed.insert(
                                it,
                                Commit {
                                    position: e.seq,
                                    initiator: e.node,
                                    set: d.set.clone().unwrap_or_default().into_iter().collect(),
                                },
                            );
                        }
                    }
                }
                EntryKind::Aborted => {
                    if let Some(it) = d.iteration {
                        ix.aborted.insert(it);
                    }
                }
                _ => {}
            }
        }
        for (msg, at) in delivered {
            ix.received.entry(msg).or_insert(at);
        }
        ix
    }

    fn commit(&self, it: IterationId) -> Result<&Commit, VerifyError> {
        if let Some(c) = self.committed.get(&it) {
            return Ok(c);
        }
        if self.aborted.contains(&it) {
            Err(VerifyError::Aborted(it))
        } else if self.initiated.contains_key(&it) {
            Err(VerifyError::NotCommitted(it))
        } else {
            Err(VerifyError::UnknownIteration(it))
        }
    }

    /// Nodes of the initiator's cluster; without setup records, every node
    /// the trace mentions.
    fn cluster_of(&self, it: IterationId) -> Vec<NodeId> {
        if let Some(m) = self.members.get(&it.initiator) {
            return m.clone();
        }
        let mut all: BTreeSet<NodeId> = self.captures.keys().copied().collect();
        for s in self.sends.values() {
            all.insert(s.src);
            all.insert(s.dst);
        }
        all.insert(it.initiator);
        all.into_iter().collect()
    }

    /// Capture made permanent by `it`.
    fn capture_for(&self, node: NodeId, it: IterationId) -> Option<&Capture> {
        self.captures
            .get(&node)?
            .iter()
            .find(|c| c.permanent_for == Some(it))
    }

    /// Latest capture of `node` made permanent by an iteration committed
    /// strictly before record `before`.
    fn permanent_before(&self, node: NodeId, before: u64) -> Option<&Capture> {
        self.captures
            .get(&node)?
            .iter()
            .filter(|c| {
                c.permanent_for
                    .and_then(|x| self.committed.get(&x))
                    .is_some_and(|cm| cm.position < before)
            })
            .max_by_key(|c| c.position)
    }

    fn snapshot(&self, it: IterationId) -> Result<GlobalSnapshot, VerifyError> {
        let commit = self.commit(it)?;
        let mut cut = BTreeMap::new();
        for x in self.cluster_of(it) {
            let c = self
                .capture_for(x, it)
                .or_else(|| self.permanent_before(x, commit.position));
            let point = c.map_or(CutPoint::INITIAL, |c| CutPoint {
                position: c.position,
                ckpt_seq: Some(c.seq),
            });
            cut.insert(x, point);
        }
        Ok(GlobalSnapshot { iteration: it, cut })
    }

    /// The dependency interval of `node` for `it`: after its previous
    /// surviving checkpoint, up to its checkpoint for `it` or the commit.
    fn interval(&self, node: NodeId, it: IterationId, commit: &Commit) -> (u64, u64) {
        let end = self
            .capture_for(node, it)
            .map_or(commit.position, |c| c.position);
        let start = self
            .captures
            .get(&node)
            .into_iter()
            .flatten()
            .filter(|c| c.position < end && c.permanent_for.is_some_and(|x| x != it))
            .filter(|c| {
                c.permanent_for
                    .and_then(|x| self.committed.get(&x))
                    .is_some_and(|cm| cm.position < commit.position)
            })
            .map(|c| c.position)
            .max()
            .unwrap_or(0);
        (start, end)
    }

    /// A message is stale for `it` when its sender had already recorded
    /// the send in a checkpoint committed before `it` started.
    fn stale(&self, s: &AppSend, it: IterationId, commit: &Commit) -> bool {
        if s.pre_initial {
            return true;
        }
        let started = self.initiated.get(&it).copied().unwrap_or(commit.position);
        self.permanent_before(s.src, started)
            .is_some_and(|c| s.position < c.position)
    }

    fn oracle_set(&self, it: IterationId) -> Result<BTreeSet<NodeId>, VerifyError> {
        let commit = self.commit(it)?;
        let cluster: BTreeSet<NodeId> = self.cluster_of(it).into_iter().collect();
        let mut deps: BTreeMap<NodeId, BTreeSet<NodeId>> = BTreeMap::new();
        let intervals: BTreeMap<NodeId, (u64, u64)> = cluster
            .iter()
            .map(|&x| (x, self.interval(x, it, commit)))
            .collect();
        for (msg, s) in &self.sends {
            if !cluster.contains(&s.src) || !cluster.contains(&s.dst) {
                continue;
            }
            let Some(&(pos, node)) = self.received.get(msg) else {
                continue;
            };
            let (lo, hi) = intervals[&node];
            if pos > lo && pos < hi && !self.stale(s, it, commit) {
                deps.entry(node).or_default().insert(s.src);
            }
        }
        let mut set = BTreeSet::from([it.initiator]);
        let mut work = vec![it.initiator];
        while let Some(j) = work.pop() {
            for &k in deps.get(&j).into_iter().flatten() {
                if set.insert(k) {
                    work.push(k);
                }
            }
        }
        Ok(set)
    }
}

/// Iterations with a commit record, in commit order.
pub fn committed_iterations(trace: &Trace) -> Vec<IterationId> {
    Index::build(&trace.entries).commit_order
}

/// Minimum set recorded by the commit of `it`.
pub fn committed_set(trace: &Trace, it: IterationId) -> Result<BTreeSet<NodeId>, VerifyError> {
    let ix = Index::build(&trace.entries);
    ix.commit(it).map(|c| c.set.clone())
}

pub fn snapshot_of_iteration(
    trace: &Trace,
    it: IterationId,
) -> Result<GlobalSnapshot, VerifyError> {
    Index::build(&trace.entries).snapshot(it)
}

/// Every application message between two nodes of the snapshot that was
/// sent after the sender's cut and received before the receiver's cut.
pub fn find_orphans(trace: &Trace, snapshot: &GlobalSnapshot) -> OrphanReport {
    orphans_in(&Index::build(&trace.entries), snapshot)
}

fn orphans_in(ix: &Index, snapshot: &GlobalSnapshot) -> OrphanReport {
    let mut report = OrphanReport::default();
    for (&msg, s) in &ix.sends {
        let (Some(cs), Some(&(pos, node))) = (snapshot.cut.get(&s.src), ix.received.get(&msg))
        else {
            continue;
        };
        let Some(cr) = snapshot.cut.get(&node) else {
            continue;
        };
        let send_pos = if s.pre_initial { 0 } else { s.position };
        if send_pos > cs.position && pos < cr.position {
            report.orphans.push(Orphan {
                msg,
                sender: s.src,
                receiver: node,
                send_seq: s.position,
                deliver_seq: pos,
                sender_cut: cs.position,
                receiver_cut: cr.position,
            });
        }
    }
    report
}

/// Closure from the initiator of the relation "j processed, inside its
/// interval, a message from k that k had not yet recorded in a committed
/// checkpoint", rebuilt from application send and receive records only.
pub fn oracle_minimum_set(trace: &Trace, it: IterationId) -> Result<BTreeSet<NodeId>, VerifyError> {
    Index::build(&trace.entries).oracle_set(it)
}

/// Merged busy intervals per node, `[start, end)`.
fn busy_intervals(entries: &[TraceEntry]) -> BTreeMap<NodeId, Vec<(Time, Time)>> {
    let mut raw: BTreeMap<NodeId, Vec<(Time, Time)>> = BTreeMap::new();
    for e in entries.iter().filter(|e| e.kind == EntryKind::BusyWindow) {
        if let Some(d) = e.detail.duration {
            raw.entry(e.node).or_default().push((e.time, e.time + d));
        }
    }
    for v in raw.values_mut() {
        v.sort();
        let mut merged: Vec<(Time, Time)> = Vec::new();
        for (s, t) in v.drain(..) {
            match merged.last_mut() {
                Some(last) if s <= last.1 => last.1 = last.1.max(t),
                _ => merged.push((s, t)),
            }
        }
        *v = merged;
    }
    raw
}

/// Application messages whose processing lagged their delivery by more
/// than a declared busy window explains, or that were never processed.
pub fn check_nonblocking(trace: &Trace) -> Vec<BlockingViolation> {
    let busy = busy_intervals(&trace.entries);
    let mut deliver: BTreeMap<(u64, NodeId), Time> = BTreeMap::new();
    let mut process: BTreeMap<(u64, NodeId), Time> = BTreeMap::new();
    for e in &trace.entries {
        if e.detail.label.as_deref() != Some("App") {
            continue;
        }
        let Some(msg) = e.detail.msg else { continue };
        match e.kind {
            EntryKind::Deliver => {
                deliver.entry((msg, e.node)).or_insert(e.time);
            }
            EntryKind::Process => {
                process.entry((msg, e.node)).or_insert(e.time);
            }
            _ => {}
        }
    }
    let mut out = Vec::new();
    let keys: BTreeSet<(u64, NodeId)> = deliver.keys().chain(process.keys()).copied().collect();
    for key in keys {
        let (msg, node) = key;
        match (deliver.get(&key), process.get(&key)) {
            (Some(&d), Some(&p)) => {
                let allowed = busy
                    .get(&node)
                    .into_iter()
                    .flatten()
                    .find(|(s, t)| *s <= d && d < *t)
                    .map_or(d, |&(_, t)| t);
                let undeclared = p.saturating_sub(allowed.max(d));
                if undeclared > 0 {
                    out.push(BlockingViolation {
                        msg,
                        node,
                        deliver_time: Some(d),
                        process_time: Some(p),
                        undeclared,
                    });
                }
            }
            (d, p) => out.push(BlockingViolation {
                msg,
                node,
                deliver_time: d.copied(),
                process_time: p.copied(),
                undeclared: 0,
            }),
        }
    }
    out
}

/// Nodes holding more than one non-discarded checkpoint for `it`.
pub fn check_at_most_one(trace: &Trace, it: IterationId) -> Vec<ExtraCheckpoint> {
    let ix = Index::build(&trace.entries);
    at_most_one_in(&ix, it)
}

fn at_most_one_in(ix: &Index, it: IterationId) -> Vec<ExtraCheckpoint> {
    let mut out = Vec::new();
    for (&node, caps) in &ix.captures {
        let surviving = caps
            .iter()
            .filter(|c| c.iteration == Some(it) && !c.discarded)
            .count();
        if surviving > 1 {
            out.push(ExtraCheckpoint {
                node,
                iteration: it,
                surviving,
            });
        }
    }
    out
}

/// Members of the commit of `it` whose ack had not been delivered to the
/// initiator when it committed.
pub fn check_commit_acks(trace: &Trace, it: IterationId) -> Result<Vec<MissingAck>, VerifyError> {
    let ix = Index::build(&trace.entries);
    commit_acks_in(&ix, &trace.entries, it)
}

fn commit_acks_in(
    ix: &Index,
    entries: &[TraceEntry],
    it: IterationId,
) -> Result<Vec<MissingAck>, VerifyError> {
    let commit = ix.commit(it)?;
    let acked: BTreeSet<NodeId> = entries
        .iter()
        .filter(|e| {
            e.kind == EntryKind::Deliver
                && e.node == commit.initiator
                && e.seq < commit.position
                && e.detail.label.as_deref() == Some("Ack")
                && e.detail.iteration == Some(it)
        })
        .filter_map(|e| e.detail.peer)
        .collect();
    Ok(commit
        .set
        .iter()
        .filter(|&&m| m != commit.initiator && !acked.contains(&m))
        .map(|&member| MissingAck {
            iteration: it,
            member,
        })
        .collect())
}

/// Non-initiator members of `it` that sent no application message in
/// their interval.
pub fn check_member_senders(
    trace: &Trace,
    it: IterationId,
) -> Result<Vec<IdleMember>, VerifyError> {
    let ix = Index::build(&trace.entries);
    member_senders_in(&ix, it)
}

fn member_senders_in(ix: &Index, it: IterationId) -> Result<Vec<IdleMember>, VerifyError> {
    let commit = ix.commit(it)?;
    let mut out = Vec::new();
    for &m in commit.set.iter().filter(|&&m| m != it.initiator) {
        let (lo, hi) = ix.interval(m, it, commit);
        let sent = ix
            .sends
            .values()
            .any(|s| s.src == m && !s.pre_initial && s.position > lo && s.position < hi);
        if !sent {
            out.push(IdleMember {
                iteration: it,
                member: m,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IterationReport {
    pub iteration: IterationId,
    pub committed_set: BTreeSet<NodeId>,
    pub oracle_set: BTreeSet<NodeId>,
    pub orphans: OrphanReport,
    pub extra_checkpoints: Vec<ExtraCheckpoint>,
    pub missing_acks: Vec<MissingAck>,
    pub idle_members: Vec<IdleMember>,
}

impl IterationReport {
    pub fn is_clean(&self) -> bool {
        self.committed_set == self.oracle_set
            && self.orphans.is_empty()
            && self.extra_checkpoints.is_empty()
            && self.missing_acks.is_empty()
            && self.idle_members.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct VerifyReport {
    pub iterations: Vec<IterationReport>,
    pub blocking: Vec<BlockingViolation>,
}

impl VerifyReport {
    pub fn is_clean(&self) -> bool {
        self.blocking.is_empty() && self.iterations.iter().all(IterationReport::is_clean)
    }

    /// One line per violation.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for r in &self.iterations {
            let it = r.iteration;
            if r.committed_set != r.oracle_set {
                out.push(format!(
                    "iteration {it}: committed set {:?} differs from oracle set {:?}",
                    ids(&r.committed_set),
                    ids(&r.oracle_set)
                ));
            }
            for o in &r.orphans.orphans {
                out.push(format!(
                    "iteration {it}: orphan message {} from {} to {} (sent at record {}, received at record {})",
                    o.msg, o.sender, o.receiver, o.send_seq, o.deliver_seq
                ));
            }
            for x in &r.extra_checkpoints {
                out.push(format!(
                    "iteration {it}: node {} holds {} checkpoints",
                    x.node, x.surviving
                ));
            }
            for m in &r.missing_acks {
                out.push(format!(
                    "iteration {it}: committed without ack from {}",
                    m.member
                ));
            }
            for m in &r.idle_members {
                out.push(format!(
                    "iteration {it}: member {} sent nothing in its interval",
                    m.member
                ));
            }
        }
        for b in &self.blocking {
            out.push(format!(
                "message {} at node {}: processing delayed by {} undeclared ticks (delivered {:?}, processed {:?})",
                b.msg, b.node, b.undeclared, b.deliver_time, b.process_time
            ));
        }
        out
    }
}

fn ids(set: &BTreeSet<NodeId>) -> Vec<u32> {
    set.iter().map(|x| x.0).collect()
}

/// Runs every oracle on every committed iteration.
pub fn verify_trace(trace: &Trace) -> VerifyReport {
    let ix = Index::build(&trace.entries);
    let mut report = VerifyReport {
        iterations: Vec::new(),
        blocking: check_nonblocking(trace),
    };
    for &it in &ix.commit_order {
        let commit = &ix.committed[&it];
        let snapshot = ix.snapshot(it).expect("committed");
        report.iterations.push(IterationReport {
            iteration: it,
            committed_set: commit.set.clone(),
            oracle_set: ix.oracle_set(it).expect("committed"),
            orphans: orphans_in(&ix, &snapshot),
            extra_checkpoints: at_most_one_in(&ix, it),
            missing_acks: commit_acks_in(&ix, &trace.entries, it).expect("committed"),
            idle_members: member_senders_in(&ix, it).expect("committed"),
        });
    }
    report
}
