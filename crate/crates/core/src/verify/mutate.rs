//! Trace corruptions for checking that the oracles catch broken runs.
//! Each returns `None` when the trace has nothing to corrupt.

use std::collections::BTreeSet;

use crate::netsim::{Detail, EntryKind, Trace, TraceEntry};
use crate::protocol::IterationId;
use crate::topology::NodeId;
use crate::verify::{committed_iterations, committed_set, snapshot_of_iteration};

fn first_shared_iteration(trace: &Trace) -> Option<(IterationId, NodeId)> {
    committed_iterations(trace).into_iter().find_map(|it| {
        let set = committed_set(trace, it).ok()?;
        set.into_iter()
            .find(|&m| m != it.initiator)
            .map(|m| (it, m))
    })
}

fn is_request(label: Option<&str>) -> bool {
    label.is_some_and(|l| l.ends_with("Request"))
}

/// Erases the request to one member of a committed iteration, along with
/// everything it caused at that member (its checkpoint and ack), and drops
/// the member from the commit.
pub fn drop_request(trace: &Trace) -> Option<Trace> {
    let (it, m) = first_shared_iteration(trace)?;
    let mut seqs: BTreeSet<u32> = BTreeSet::new();
    for e in &trace.entries {
        if e.node == m
            && matches!(
                e.kind,
                EntryKind::CheckpointTaken | EntryKind::CheckpointPromoted
            )
            && e.detail.iteration == Some(it)
        {
            seqs.extend(e.detail.ckpt_seq);
        }
    }
    let mut out = trace.clone();
    out.entries.retain(|e| {
        let d = &e.detail;
        let same = d.iteration == Some(it);
        let request_to_m = e.kind == EntryKind::RequestSent && same && d.peer == Some(m);
        let request_at_m =
            e.kind == EntryKind::Deliver && e.node == m && same && is_request(d.label.as_deref());
        let ack_from_m = e.kind == EntryKind::AckSent && e.node == m && same;
        let ack_delivered = e.kind == EntryKind::Deliver
            && same
            && d.label.as_deref() == Some("Ack")
            && d.peer == Some(m);
        let checkpoint = e.node == m
            && matches!(
                e.kind,
                EntryKind::CheckpointTaken | EntryKind::CheckpointPromoted
            )
            && d.ckpt_seq.is_some_and(|s| seqs.contains(&s));
        !(request_to_m || request_at_m || ack_from_m || ack_delivered || checkpoint)
    });
    for e in &mut out.entries {
        if matches!(e.kind, EntryKind::Committed | EntryKind::CommitSent)
            && e.detail.iteration == Some(it)
        {
            if let Some(set) = &mut e.detail.set {
                set.retain(|&x| x != m);
            }
        }
    }
    out.renumber();
    Some(out)
}

/// Moves the acks one member delivered to the initiator before its commit
/// to just after the commit.
pub fn commit_before_ack(trace: &Trace) -> Option<Trace> {
    let (it, _) = first_shared_iteration(trace)?;
    let commit_at = trace
        .entries
        .iter()
        .position(|e| e.kind == EntryKind::Committed && e.detail.iteration == Some(it))?;
    let initiator = trace.entries[commit_at].node;
    let is_ack = |e: &TraceEntry| {
        e.kind == EntryKind::Deliver
            && e.node == initiator
            && e.detail.label.as_deref() == Some("Ack")
            && e.detail.iteration == Some(it)
    };
    let last = trace.entries[..commit_at].iter().rposition(is_ack)?;
    let member = trace.entries[last].detail.peer;
    let (mut moved, mut kept): (Vec<TraceEntry>, Vec<TraceEntry>) = (Vec::new(), Vec::new());
    for (i, e) in trace.entries.iter().enumerate() {
        if i < commit_at && is_ack(e) && e.detail.peer == member {
            moved.push(e.clone());
        } else {
            kept.push(e.clone());
        }
    }
    let commit_at = commit_at - moved.len();
    kept.splice(commit_at + 1..commit_at + 1, moved);
    let mut out = trace.clone();
    out.entries = kept;
    out.renumber();
    Some(out)
}

/// Adds an application message sent after one node's cut and processed
/// before another's, for the first committed iteration where the cuts
/// differ.
pub fn inject_orphan(trace: &Trace) -> Option<Trace> {
    for it in committed_iterations(trace) {
        let snap = snapshot_of_iteration(trace, it).ok()?;
        let (&s, cs) = snap.cut.iter().min_by_key(|(_, c)| c.position)?;
        let (&r, cr) = snap.cut.iter().max_by_key(|(_, c)| c.position)?;
        if s == r || cs.position >= cr.position {
            continue;
        }
        let at = trace.entries.iter().position(|e| e.seq == cr.position)?;
        let time = trace.entries[at].time;
        let msg = trace
            .entries
            .iter()
            .filter_map(|e| e.detail.msg)
            .max()
            .unwrap_or(0)
            + 1;
        let record = |node: NodeId, kind: EntryKind, peer: NodeId| TraceEntry {
            seq: 0,
            time,
            node,
            kind,
            detail: Detail {
                msg: Some(msg),
                label: Some("App".into()),
                peer: Some(peer),
                payload: (kind == EntryKind::Send).then(|| "injected".into()),
                ..Detail::default()
            },
        };
        let mut out = trace.clone();
        out.entries.splice(
            at..at,
            [
                record(s, EntryKind::Send, r),
                record(r, EntryKind::Deliver, s),
                record(r, EntryKind::Process, s),
            ],
        );
        out.renumber();
        return Some(out);
    }
    None
}
