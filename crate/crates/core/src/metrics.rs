//! Counts over a trace: checkpoints by kind, messages by type, set sizes
//! and undeclared blocking.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::netsim::{EntryKind, Trace, TraceError};
use crate::protocol::{CheckpointKind, IterationId};
use crate::topology::NodeId;
use crate::verify::check_nonblocking;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IterationMetrics {
    pub iteration: Option<IterationId>,
    pub committed: bool,
    pub permanents: u64,
    pub tentatives_taken: u64,
    pub mutables_promoted: u64,
    pub control_messages: BTreeMap<String, u64>,
    pub minset_size: usize,
    pub cluster_size: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct MetricsReport {
    pub iterations: Vec<IterationMetrics>,
    pub permanents: u64,
    pub tentatives_taken: u64,
    pub mutables_taken: u64,
    pub mutables_promoted: u64,
    /// Mutables thrown away at a commit or abort ("useless" checkpoints).
    pub mutables_discarded: u64,
    /// Mutables still pending when the run ended.
    pub mutables_pending: u64,
    pub control_messages: BTreeMap<String, u64>,
    pub app_messages: u64,
    /// Ticks of application processing delay outside declared busy windows.
    pub blocking_time: u64,
}

impl MetricsReport {
    /// Mean permanent checkpoints per committed iteration.
    pub fn permanents_per_iteration(&self) -> f64 {
        let committed = self.iterations.iter().filter(|i| i.committed).count();
        if committed == 0 {
            0.0
        } else {
            self.permanents as f64 / committed as f64
        }
    }

    pub fn control_total(&self) -> u64 {
        self.control_messages.values().sum()
    }

    /// `(name, value)` pairs of the aggregate counts, for line output.
    pub fn fields(&self) -> Vec<(String, u64)> {
        let mut out = vec![
            ("iterations".to_string(), self.iterations.len() as u64),
            (
                "committed".to_string(),
                self.iterations.iter().filter(|i| i.committed).count() as u64,
            ),
            ("permanents".to_string(), self.permanents),
            ("tentatives_taken".to_string(), self.tentatives_taken),
            ("mutables_taken".to_string(), self.mutables_taken),
            ("mutables_promoted".to_string(), self.mutables_promoted),
            ("mutables_discarded".to_string(), self.mutables_discarded),
            ("mutables_pending".to_string(), self.mutables_pending),
            ("app_messages".to_string(), self.app_messages),
            ("control_messages".to_string(), self.control_total()),
        ];
        for (label, n) in &self.control_messages {
            out.push((format!("control.{label}"), *n));
        }
        out.push(("blocking_time".to_string(), self.blocking_time));
        out
    }
}

pub fn summarize_metrics(trace: &Trace) -> Result<MetricsReport, TraceError> {
    if !trace.is_complete() {
        return Err(TraceError::Truncated);
    }
    let mut report = MetricsReport::default();
    let mut per: BTreeMap<IterationId, IterationMetrics> = BTreeMap::new();
    let mut order: Vec<IterationId> = Vec::new();
    let mut cluster_size: BTreeMap<NodeId, usize> = BTreeMap::new();
    let mut pending_mutable: BTreeMap<(NodeId, u32), bool> = BTreeMap::new();
    let mut slot = |per: &mut BTreeMap<IterationId, IterationMetrics>, it: IterationId| {
        if !per.contains_key(&it) {
            order.push(it);
        }
        per.entry(it).or_insert_with(|| IterationMetrics {
            iteration: Some(it),
            ..IterationMetrics::default()
        });
    };
    for e in &trace.entries {
        let d = &e.detail;
        match e.kind {
            EntryKind::Setup => {
                cluster_size.insert(e.node, d.set.as_ref().map_or(1, Vec::len));
            }
            EntryKind::Send if d.label.as_deref() == Some("App") => report.app_messages += 1,
            EntryKind::RequestSent
            | EntryKind::AckSent
            | EntryKind::CommitSent
            | EntryKind::AbortSent => {
                let label = d.label.clone().unwrap_or_default();
                *report.control_messages.entry(label.clone()).or_insert(0) += 1;
                if let Some(it) = d.iteration {
                    slot(&mut per, it);
                    *per.get_mut(&it)
                        .expect("slot")
                        .control_messages
                        .entry(label)
                        .or_insert(0) += 1;
                }
            }
            EntryKind::CheckpointTaken => match d.ckpt_kind {
                Some(CheckpointKind::Mutable) => {
                    report.mutables_taken += 1;
                    if let Some(seq) = d.ckpt_seq {
                        pending_mutable.insert((e.node, seq), true);
                    }
                }
                Some(CheckpointKind::Tentative) => {
                    report.tentatives_taken += 1;
                    if let Some(it) = d.iteration {
                        slot(&mut per, it);
                        per.get_mut(&it).expect("slot").tentatives_taken += 1;
                    }
                }
                _ => {}
            },
            EntryKind::CheckpointPromoted => {
                let key = (e.node, d.ckpt_seq.unwrap_or(0));
                match d.ckpt_kind {
                    Some(CheckpointKind::Tentative) => {
                        if pending_mutable.remove(&key).is_some() {
                            report.mutables_promoted += 1;
                            if let Some(it) = d.iteration {
                                slot(&mut per, it);
                                per.get_mut(&it).expect("slot").mutables_promoted += 1;
                            }
                        }
                    }
                    Some(CheckpointKind::Permanent) => {
                        report.permanents += 1;
                        if let Some(it) = d.iteration {
                            slot(&mut per, it);
                            per.get_mut(&it).expect("slot").permanents += 1;
                        }
                    }
                    _ => {}
                }
            }
            EntryKind::CheckpointDiscarded if d.ckpt_kind == Some(CheckpointKind::Mutable) => {
                if pending_mutable
                    .remove(&(e.node, d.ckpt_seq.unwrap_or(0)))
                    .is_some()
                {
                    report.mutables_discarded += 1;
                }
            }
            EntryKind::Initiated => {
                if let Some(it) = d.iteration {
                    slot(&mut per, it);
                    per.get_mut(&it).expect("slot").cluster_size =
                        cluster_size.get(&e.node).copied().unwrap_or(1);
                }
            }
            EntryKind::Committed => {
                if let Some(it) = d.iteration {
                    slot(&mut per, it);
                    let m = per.get_mut(&it).expect("slot");
                    m.committed = true;
                    m.minset_size = d.set.as_ref().map_or(0, Vec::len);
                    m.cluster_size = cluster_size.get(&e.node).copied().unwrap_or(1);
                }
            }
            _ => {}
        }
    }
    report.mutables_pending = pending_mutable.len() as u64;
    report.iterations = order
        .into_iter()
        .map(|it| per.remove(&it).expect("slot"))
        .collect();
    report.blocking_time = check_nonblocking(trace).iter().map(|v| v.undeclared).sum();
    Ok(report)
}

/// `(field, left, right)` for every aggregate count of two reports.
pub fn compare(left: &MetricsReport, right: &MetricsReport) -> Vec<(String, u64, u64)> {
    let r: BTreeMap<String, u64> = right.fields().into_iter().collect();
    let mut out: Vec<(String, u64, u64)> = left
        .fields()
        .into_iter()
        .map(|(k, v)| {
            let w = r.get(&k).copied().unwrap_or(0);
            (k, v, w)
        })
        .collect();
    for (k, v) in right.fields() {
        if !out.iter().any(|(name, _, _)| *name == k) {
            out.push((k, 0, v));
        }
    }
    out
}
