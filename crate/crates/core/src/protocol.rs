//! Per-node checkpointing state machine.
//!
//! Every node of a cluster runs one [`ProcessState`]. Node ids inside this
//! module are cluster-local ranks `1..=n`; the simulator translates them to
//! network ids. Each input (application message, control message, local
//! command) is applied synchronously and yields a [`StepOutput`] with the
//! messages to send and the events to trace. Nothing is ever queued waiting
//! for protocol progress, so application messages are always processed in
//! the step that delivers them.
//!
//! Dependency tracking follows these rules:
//!
//! * `dv[j]` is set when a message from `j` is processed whose piggybacked
//!   csn is newer than the latest committed permanent checkpoint of `j`
//!   known here; older messages were already recorded as sent by that
//!   checkpoint and create no dependency.
//! * A message carrying `pb_c_state = true` and a csn newer than
//!   `known_csn[j]` was sent after `j` reached its cut point for the live
//!   iteration. If this node has not reached its own cut point yet
//!   (`c_state == false`) it must do so before processing the message:
//!   with a mutable checkpoint when it has sent something since its last
//!   checkpoint, otherwise by advancing its csn so that its last checkpoint
//!   serves as the cut point.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::topology::NodeId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("node {0} is outside 1..={1}")]
    OutOfRange(NodeId, u32),
    #[error("a node cannot send to itself")]
    SelfSend,
    #[error("node {0} is not the clusterhead and cannot initiate")]
    NotClusterHead(NodeId),
    #[error("iteration {0} is still in progress")]
    IterationInProgress(IterationId),
    #[error("no iteration is in progress")]
    NoIteration,
    #[error("checkpoint {0} is still pending; a second one cannot be taken")]
    DoubleCheckpoint(u32),
    #[error("permanent checkpoints are only produced by commit")]
    InvalidKind,
    #[error("member {0} received commit for {1} without a tentative checkpoint")]
    MemberWithoutTentative(NodeId, IterationId),
    #[error("request for {0} arrived while holding a tentative checkpoint of {1}")]
    OverlappingIteration(IterationId, IterationId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CheckpointKind {
    Mutable,
    Tentative,
    Permanent,
}

/// Which processes an initiation asks to checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Mode {
    /// Only the dependency closure of the initiator.
    #[default]
    MinimumProcess,
    /// Every node of the cluster (comparison baseline).
    AllProcess,
}

/// One checkpointing iteration: the initiator and the csn of the
/// checkpoint it took when starting the iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct IterationId {
    pub initiator: NodeId,
    pub csn: u32,
}

impl fmt::Display for IterationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.initiator, self.csn)
    }
}

/// Application state: a count of processed messages and a running digest
/// of their payloads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AppState {
    pub processed: u64,
    pub digest: u64,
}

impl AppState {
    const PRIME: u64 = 0x0000_0100_0000_01b3;

    fn absorb(&mut self, from: NodeId, payload: &str) {
        self.processed += 1;
        let mut h = self.digest ^ 0xcbf2_9ce4_8422_2325;
        for b in from.0.to_le_bytes().iter().chain(payload.as_bytes()) {
            h ^= u64::from(*b);
            h = h.wrapping_mul(Self::PRIME);
        }
        self.digest = h;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub owner: NodeId,
    pub seq: u32,
    pub kind: CheckpointKind,
    pub dv_at_capture: Vec<bool>,
    pub app_state: AppState,
    pub iteration: Option<IterationId>,
}

impl Checkpoint {
    /// Peers whose dependency bit was set at capture time.
    pub fn dependents(&self) -> BTreeSet<NodeId> {
        bits_to_set(&self.dv_at_capture)
    }
}

/// What a discarded checkpoint needs to undo itself.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Rollback {
    dv_csn: Vec<u32>,
    sent_since_ckpt: bool,
}

/// The state a node resumes from when it restarts at a checkpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RestorePoint {
    pub csn: u32,
    pub known_csn: Vec<u32>,
    pub permanent_csn: Vec<u32>,
    pub closed: BTreeMap<NodeId, u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppMessage {
    pub src: NodeId,
    pub dst: NodeId,
    pub payload: String,
    pub pb_own_csn: u32,
    pub pb_c_state: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Request {
    pub from: NodeId,
    pub initiator: NodeId,
    pub init_csn: u32,
    pub known_minset: BTreeSet<NodeId>,
}

impl Request {
    pub fn iteration(&self) -> IterationId {
        IterationId {
            initiator: self.initiator,
            csn: self.init_csn,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub from: NodeId,
    pub iteration: IterationId,
    pub taken: bool,
    pub extra_dependents: BTreeSet<NodeId>,
    /// Sequence number of the checkpoint the sender holds for the iteration.
    pub ckpt_csn: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Commit {
    pub iteration: IterationId,
    pub minimum_set: BTreeSet<NodeId>,
    /// Sequence number of the checkpoint each member turns permanent.
    pub checkpoint_csns: BTreeMap<NodeId, u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Abort {
    pub iteration: IterationId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Message {
    App(AppMessage),
    PrimaryRequest(Request),
    SecondaryRequest(Request),
    PropagatedRequest(Request),
    Ack(Ack),
    Commit(Commit),
    Abort(Abort),
}

impl Message {
    pub fn label(&self) -> &'static str {
        match self {
            Message::App(_) => "App",
            Message::PrimaryRequest(_) => "PrimaryRequest",
            Message::SecondaryRequest(_) => "SecondaryRequest",
            Message::PropagatedRequest(_) => "PropagatedRequest",
            Message::Ack(_) => "Ack",
            Message::Commit(_) => "Commit",
            Message::Abort(_) => "Abort",
        }
    }

    pub fn is_app(&self) -> bool {
        matches!(self, Message::App(_))
    }

    pub fn iteration(&self) -> Option<IterationId> {
        match self {
            Message::App(_) => None,
            Message::PrimaryRequest(r)
            | Message::SecondaryRequest(r)
            | Message::PropagatedRequest(r) => Some(r.iteration()),
            Message::Ack(a) => Some(a.iteration),
            Message::Commit(c) => Some(c.iteration),
            Message::Abort(a) => Some(a.iteration),
        }
    }
}

/// Something a step did that the trace should record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProtocolEvent {
    CheckpointTaken {
        checkpoint: Checkpoint,
        restore: RestorePoint,
    },
    CheckpointPromoted {
        seq: u32,
        to: CheckpointKind,
        iteration: IterationId,
    },
    CheckpointDiscarded {
        seq: u32,
        kind: CheckpointKind,
        iteration: Option<IterationId>,
    },
    /// Own csn advanced without a checkpoint.
    CsnAdvanced {
        csn: u32,
    },
    KnownCsn {
        peer: NodeId,
        csn: u32,
    },
    DvSet {
        peer: NodeId,
        csn: u32,
    },
    DvCleared {
        peer: NodeId,
    },
    Ignored {
        reason: String,
    },
    IterationStarted {
        iteration: IterationId,
        minset: BTreeSet<NodeId>,
    },
    IterationCommitted {
        iteration: IterationId,
        minimum_set: BTreeSet<NodeId>,
    },
    IterationAborted {
        iteration: IterationId,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StepOutput {
    pub outbound: Vec<(NodeId, Message)>,
    pub events: Vec<ProtocolEvent>,
}

impl StepOutput {
    fn send(&mut self, to: NodeId, m: Message) {
        self.outbound.push((to, m));
    }

    fn event(&mut self, e: ProtocolEvent) {
        self.events.push(e);
    }
}

/// Initiator bookkeeping for the iteration it is driving.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InitiatorRound {
    pub iteration: IterationId,
    /// Requests sent to each node minus acks received from it. Counts may
    /// go transiently negative when an ack overtakes the report of the
    /// request it answers.
    pub pending_acks: BTreeMap<NodeId, i32>,
    pub collected_minset: BTreeSet<NodeId>,
    pub checkpoint_csns: BTreeMap<NodeId, u32>,
}

impl InitiatorRound {
    fn complete(&self) -> bool {
        self.pending_acks.values().all(|&c| c == 0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessState {
    pub me: NodeId,
    pub n: u32,
    pub head: Option<NodeId>,
    pub mode: Mode,
    pub csn: u32,
    pub known_csn: Vec<u32>,
    /// Latest committed permanent checkpoint seq per peer, 0 for the
    /// initial state.
    pub permanent_csn: Vec<u32>,
    pub dv: Vec<bool>,
    /// Highest piggybacked csn behind each set `dv` bit.
    pub dv_csn: Vec<u32>,
    pub c_state: bool,
    pub sent_since_ckpt: bool,
    pub app: AppState,
    pub checkpoints: Vec<Checkpoint>,
    rollback: Option<Rollback>,
    pub participating: Option<IterationId>,
    /// Highest closed (committed or aborted) iteration csn per initiator.
    pub closed: BTreeMap<NodeId, u32>,
    pub round: Option<InitiatorRound>,
}

fn bits_to_set(bits: &[bool]) -> BTreeSet<NodeId> {
    bits.iter()
        .enumerate()
        .filter(|(_, b)| **b)
        .map(|(i, _)| NodeId(i as u32 + 1))
        .collect()
}

impl ProcessState {
    /// Fresh process: csn 1, no dependencies, the initial state acting as
    /// the implicit permanent recovery point.
    pub fn new(me: NodeId, n: u32) -> Result<Self, ProtocolError> {
        if me.0 == 0 || me.0 > n {
            return Err(ProtocolError::OutOfRange(me, n));
        }
        let len = n as usize;
        Ok(Self {
            me,
            n,
            head: None,
            mode: Mode::MinimumProcess,
            csn: 1,
            known_csn: vec![1; len],
            permanent_csn: vec![0; len],
            dv: vec![false; len],
            dv_csn: vec![0; len],
            c_state: false,
            sent_since_ckpt: false,
            app: AppState::default(),
            checkpoints: Vec::new(),
            rollback: None,
            participating: None,
            closed: BTreeMap::new(),
            round: None,
        })
    }

    pub fn with_head(mut self, head: NodeId) -> Self {
        self.head = Some(head);
        self
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    fn idx(&self, x: NodeId) -> Result<usize, ProtocolError> {
        if x.0 == 0 || x.0 > self.n {
            Err(ProtocolError::OutOfRange(x, self.n))
        } else {
            Ok((x.0 - 1) as usize)
        }
    }

    /// The checkpoint that has not been committed yet, if any.
    pub fn pending(&self) -> Option<&Checkpoint> {
        self.checkpoints
            .last()
            .filter(|c| c.kind != CheckpointKind::Permanent)
    }

    pub fn latest_permanent(&self) -> Option<&Checkpoint> {
        self.checkpoints
            .iter()
            .rev()
            .find(|c| c.kind == CheckpointKind::Permanent)
    }

    pub fn dependents(&self) -> BTreeSet<NodeId> {
        bits_to_set(&self.dv)
    }

    fn is_closed(&self, it: IterationId) -> bool {
        self.closed.get(&it.initiator).is_some_and(|&c| it.csn <= c)
    }

    fn close(&mut self, it: IterationId) {
        let e = self.closed.entry(it.initiator).or_insert(0);
        *e = (*e).max(it.csn);
    }

    fn restore_point(&self) -> RestorePoint {
        RestorePoint {
            csn: self.csn,
            known_csn: self.known_csn.clone(),
            permanent_csn: self.permanent_csn.clone(),
            closed: self.closed.clone(),
        }
    }

    /// Stable content hash of the whole state.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("state serializes");
        let hash = Sha256::digest(&bytes);
        hash[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Records the current state as a new non-permanent checkpoint, then
    /// starts a new interval: csn advances, dependencies and the send flag
    /// clear, and the node enters the checkpointing state.
    pub fn take_checkpoint(
        &mut self,
        kind: CheckpointKind,
        iteration: Option<IterationId>,
    ) -> Result<ProtocolEvent, ProtocolError> {
        if kind == CheckpointKind::Permanent {
            return Err(ProtocolError::InvalidKind);
        }
        if let Some(p) = self.pending() {
            return Err(ProtocolError::DoubleCheckpoint(p.seq));
        }
        let checkpoint = Checkpoint {
            owner: self.me,
            seq: self.csn,
            kind,
            dv_at_capture: self.dv.clone(),
            app_state: self.app,
            iteration,
        };
        self.rollback = Some(Rollback {
            dv_csn: self.dv_csn.clone(),
            sent_since_ckpt: self.sent_since_ckpt,
        });
        self.checkpoints.push(checkpoint.clone());
        self.csn += 1;
        self.dv.fill(false);
        self.dv_csn.fill(0);
        self.sent_since_ckpt = false;
        self.c_state = true;
        if kind == CheckpointKind::Tentative {
            self.participating = iteration;
        }
        Ok(ProtocolEvent::CheckpointTaken {
            checkpoint,
            restore: self.restore_point(),
        })
    }

    fn promote(&mut self, to: CheckpointKind, iteration: IterationId) -> Option<ProtocolEvent> {
        let last = self.checkpoints.last_mut()?;
        last.kind = to;
        last.iteration = Some(iteration);
        let seq = last.seq;
        if to == CheckpointKind::Permanent {
            self.rollback = None;
            self.participating = None;
        } else {
            self.participating = Some(iteration);
        }
        Some(ProtocolEvent::CheckpointPromoted { seq, to, iteration })
    }

    /// Drops the pending checkpoint. Everything recorded since it was taken
    /// is folded back into the interval it interrupted; csn keeps its value
    /// so piggybacked sequence numbers stay monotone.
    fn discard_pending(&mut self) -> Option<ProtocolEvent> {
        self.pending()?;
        let ckpt = self.checkpoints.pop().expect("pending checkpoint");
        let rb = self
            .rollback
            .take()
            .expect("pending checkpoint has rollback data");
        for (i, bit) in ckpt.dv_at_capture.iter().enumerate() {
            self.dv[i] |= *bit;
            self.dv_csn[i] = self.dv_csn[i].max(rb.dv_csn[i]);
        }
        self.sent_since_ckpt |= rb.sent_since_ckpt;
        self.participating = None;
        Some(ProtocolEvent::CheckpointDiscarded {
            seq: ckpt.seq,
            kind: ckpt.kind,
            iteration: ckpt.iteration,
        })
    }

    /// Discards the pending checkpoint when closing `it` makes it useless:
    /// a mutable, or a tentative taken for `it`. A tentative for another
    /// iteration is kept.
    fn discard_for(&mut self, it: IterationId) -> Option<ProtocolEvent> {
        let p = self.pending()?;
        if p.kind == CheckpointKind::Tentative && p.iteration != Some(it) {
            return None;
        }
        self.discard_pending()
    }

    pub fn send_app_message(
        &mut self,
        dst: NodeId,
        payload: impl Into<String>,
    ) -> Result<StepOutput, ProtocolError> {
        self.idx(dst)?;
        if dst == self.me {
            return Err(ProtocolError::SelfSend);
        }
        let m = AppMessage {
            src: self.me,
            dst,
            payload: payload.into(),
            pb_own_csn: self.csn,
            pb_c_state: self.c_state,
        };
        self.sent_since_ckpt = true;
        let mut out = StepOutput::default();
        out.send(dst, Message::App(m));
        Ok(out)
    }

    pub fn recv_app_message(&mut self, m: &AppMessage) -> Result<StepOutput, ProtocolError> {
        let j = self.idx(m.src)?;
        let mut out = StepOutput::default();
        let fresh = m.pb_own_csn > self.known_csn[j];
        if fresh && m.pb_c_state && !self.c_state {
            let induce = match self.mode {
                Mode::MinimumProcess => self.sent_since_ckpt,
                Mode::AllProcess => true,
            };
            if induce {
                let ev = self.take_checkpoint(CheckpointKind::Mutable, None)?;
                out.event(ev);
            } else {
                self.csn += 1;
                self.c_state = true;
                out.event(ProtocolEvent::CsnAdvanced { csn: self.csn });
            }
        }
        if fresh {
            self.known_csn[j] = m.pb_own_csn;
            out.event(ProtocolEvent::KnownCsn {
                peer: m.src,
                csn: m.pb_own_csn,
            });
        }
        self.app.absorb(m.src, &m.payload);
        if m.pb_own_csn > self.permanent_csn[j] {
            self.dv[j] = true;
            self.dv_csn[j] = self.dv_csn[j].max(m.pb_own_csn);
            out.event(ProtocolEvent::DvSet {
                peer: m.src,
                csn: m.pb_own_csn,
            });
        } else {
            out.event(ProtocolEvent::Ignored {
                reason: format!(
                    "sent before permanent checkpoint {} of {}; no dependency",
                    self.permanent_csn[j], m.src
                ),
            });
        }
        Ok(out)
    }

    /// Piggyback values for a message leaving the cluster. Such messages
    /// take no part in dependency tracking, so nothing is recorded.
    pub fn stamp_foreign(&self) -> (u32, bool) {
        (self.csn, self.c_state)
    }

    /// Applies a message from another cluster to the application state only.
    pub fn absorb_foreign(&mut self, from: NodeId, payload: &str) {
        self.app.absorb(from, payload);
    }

    /// Starts an iteration at the clusterhead.
    pub fn initiate_checkpoint(&mut self) -> Result<StepOutput, ProtocolError> {
        if self.head != Some(self.me) {
            return Err(ProtocolError::NotClusterHead(self.me));
        }
        if let Some(r) = &self.round {
            return Err(ProtocolError::IterationInProgress(r.iteration));
        }
        let mut out = StepOutput::default();
        let seq = match self.pending().map(|c| (c.kind, c.seq)) {
            Some((CheckpointKind::Mutable, seq)) => {
                let it = IterationId {
                    initiator: self.me,
                    csn: seq,
                };
                out.event(
                    self.promote(CheckpointKind::Tentative, it)
                        .expect("pending"),
                );
                self.c_state = true;
                seq
            }
            Some((_, seq)) => return Err(ProtocolError::DoubleCheckpoint(seq)),
            None => {
                let seq = self.csn;
                let it = IterationId {
                    initiator: self.me,
                    csn: seq,
                };
                out.event(self.take_checkpoint(CheckpointKind::Tentative, Some(it))?);
                seq
            }
        };
        let iteration = IterationId {
            initiator: self.me,
            csn: seq,
        };
        let captured = self
            .pending()
            .expect("tentative held")
            .dv_at_capture
            .clone();
        let minset = match self.mode {
            Mode::MinimumProcess => compute_minset(&BTreeMap::from([(self.me, captured)]), self.me),
            Mode::AllProcess => (1..=self.n).map(NodeId).collect(),
        };
        out.event(ProtocolEvent::IterationStarted {
            iteration,
            minset: minset.clone(),
        });
        let mut round = InitiatorRound {
            iteration,
            pending_acks: BTreeMap::new(),
            collected_minset: minset.clone(),
            checkpoint_csns: BTreeMap::from([(self.me, seq)]),
        };
        for &k in minset.iter().filter(|&&k| k != self.me) {
            round.pending_acks.insert(k, 1);
            out.send(
                k,
                Message::PrimaryRequest(Request {
                    from: self.me,
                    initiator: self.me,
                    init_csn: seq,
                    known_minset: minset.clone(),
                }),
            );
        }
        self.round = Some(round);
        if self.round.as_ref().is_some_and(InitiatorRound::complete) {
            self.commit_round(&mut out)?;
        }
        Ok(out)
    }

    /// Handles a primary, secondary or propagated request; all three are
    /// treated alike apart from the label of onward requests.
    pub fn recv_checkpoint_request(&mut self, msg: &Message) -> Result<StepOutput, ProtocolError> {
        let (req, onward): (&Request, fn(Request) -> Message) = match msg {
            Message::PrimaryRequest(r) => (r, Message::SecondaryRequest),
            Message::SecondaryRequest(r) | Message::PropagatedRequest(r) => {
                (r, Message::PropagatedRequest)
            }
            _ => unreachable!("not a checkpoint request"),
        };
        let it = req.iteration();
        let mut out = StepOutput::default();
        if self.is_closed(it) {
            out.event(ProtocolEvent::Ignored {
                reason: format!("request for closed iteration {it}"),
            });
            return Ok(out);
        }
        if self.round.as_ref().is_some_and(|r| r.iteration == it) {
            out.event(ProtocolEvent::Ignored {
                reason: format!("initiator of {it} ignores requests"),
            });
            return Ok(out);
        }
        if self.participating == Some(it) {
            let seq = self.pending().map(|c| c.seq).unwrap_or(0);
            out.event(ProtocolEvent::Ignored {
                reason: format!("already participating in {it}"),
            });
            out.send(
                it.initiator,
                Message::Ack(Ack {
                    from: self.me,
                    iteration: it,
                    taken: true,
                    extra_dependents: BTreeSet::new(),
                    ckpt_csn: seq,
                }),
            );
            return Ok(out);
        }
        match self.pending().map(|c| (c.kind, c.iteration)) {
            Some((CheckpointKind::Mutable, _)) => {
                out.event(
                    self.promote(CheckpointKind::Tentative, it)
                        .expect("pending"),
                );
                self.c_state = true;
            }
            Some((_, other)) => {
                return Err(ProtocolError::OverlappingIteration(it, other.unwrap_or(it)));
            }
            None => out.event(self.take_checkpoint(CheckpointKind::Tentative, Some(it))?),
        }
        let held = self.pending().expect("tentative held");
        let seq = held.seq;
        let new_deps: BTreeSet<NodeId> = match self.mode {
            Mode::MinimumProcess => held
                .dependents()
                .into_iter()
                .filter(|k| *k != self.me && !req.known_minset.contains(k))
                .collect(),
            Mode::AllProcess => BTreeSet::new(),
        };
        let mut known = req.known_minset.clone();
        known.insert(self.me);
        known.extend(new_deps.iter().copied());
        for &k in &new_deps {
            out.send(
                k,
                onward(Request {
                    from: self.me,
                    initiator: it.initiator,
                    init_csn: it.csn,
                    known_minset: known.clone(),
                }),
            );
        }
        out.send(
            it.initiator,
            Message::Ack(Ack {
                from: self.me,
                iteration: it,
                taken: true,
                extra_dependents: new_deps,
                ckpt_csn: seq,
            }),
        );
        Ok(out)
    }

    pub fn recv_ack(&mut self, ack: &Ack) -> Result<StepOutput, ProtocolError> {
        let mut out = StepOutput::default();
        let Some(round) = self.round.as_mut().filter(|r| r.iteration == ack.iteration) else {
            out.event(ProtocolEvent::Ignored {
                reason: format!("unexpected ack from {} for {}", ack.from, ack.iteration),
            });
            return Ok(out);
        };
        *round.pending_acks.entry(ack.from).or_insert(0) -= 1;
        for &x in &ack.extra_dependents {
            *round.pending_acks.entry(x).or_insert(0) += 1;
            round.collected_minset.insert(x);
        }
        round.checkpoint_csns.insert(ack.from, ack.ckpt_csn);
        if round.complete() {
            self.commit_round(&mut out)?;
        }
        Ok(out)
    }

    fn commit_round(&mut self, out: &mut StepOutput) -> Result<(), ProtocolError> {
        let round = self.round.take().ok_or(ProtocolError::NoIteration)?;
        let commit = Commit {
            iteration: round.iteration,
            minimum_set: round.collected_minset,
            checkpoint_csns: round.checkpoint_csns,
        };
        for k in (1..=self.n).map(NodeId).filter(|&k| k != self.me) {
            out.send(k, Message::Commit(commit.clone()));
        }
        out.event(ProtocolEvent::IterationCommitted {
            iteration: commit.iteration,
            minimum_set: commit.minimum_set.clone(),
        });
        let local = self.recv_commit(&commit)?;
        out.events.extend(local.events);
        Ok(())
    }

    pub fn recv_commit(&mut self, c: &Commit) -> Result<StepOutput, ProtocolError> {
        let mut out = StepOutput::default();
        let it = c.iteration;
        if self.is_closed(it) {
            out.event(ProtocolEvent::Ignored {
                reason: format!("commit for closed iteration {it}"),
            });
            return Ok(out);
        }
        self.close(it);
        let held = self.pending().map(|p| (p.kind, p.iteration));
        if c.minimum_set.contains(&self.me) {
            match held {
                Some((CheckpointKind::Tentative, Some(x))) if x == it => {
                    out.event(
                        self.promote(CheckpointKind::Permanent, it)
                            .expect("pending"),
                    );
                }
                _ => return Err(ProtocolError::MemberWithoutTentative(self.me, it)),
            }
        } else if let Some(ev) = self.discard_for(it) {
            out.event(ev);
        }
        self.c_state = self.pending().is_some();
        for (&k, &seq) in &c.checkpoint_csns {
            let i = self.idx(k)?;
            self.permanent_csn[i] = self.permanent_csn[i].max(seq);
            if seq + 1 > self.known_csn[i] {
                self.known_csn[i] = seq + 1;
                out.event(ProtocolEvent::KnownCsn {
                    peer: k,
                    csn: seq + 1,
                });
            }
        }
        self.prune_stale_dependencies(&mut out);
        Ok(out)
    }

    /// Clears dependency bits whose every message predates a permanent
    /// checkpoint of the sender.
    fn prune_stale_dependencies(&mut self, out: &mut StepOutput) {
        for i in 0..self.dv.len() {
            if self.dv[i] && self.dv_csn[i] <= self.permanent_csn[i] {
                self.dv[i] = false;
                self.dv_csn[i] = 0;
                out.event(ProtocolEvent::DvCleared {
                    peer: NodeId(i as u32 + 1),
                });
            }
        }
    }

    /// Cancels the iteration this initiator is driving and tells everyone.
    pub fn abort_iteration(&mut self) -> Result<StepOutput, ProtocolError> {
        let round = self.round.as_ref().ok_or(ProtocolError::NoIteration)?;
        let abort = Abort {
            iteration: round.iteration,
        };
        let mut out = StepOutput::default();
        for k in (1..=self.n).map(NodeId).filter(|&k| k != self.me) {
            out.send(k, Message::Abort(abort.clone()));
        }
        out.event(ProtocolEvent::IterationAborted {
            iteration: abort.iteration,
        });
        let local = self.recv_abort(&abort)?;
        out.events.extend(local.events);
        Ok(out)
    }

    pub fn recv_abort(&mut self, a: &Abort) -> Result<StepOutput, ProtocolError> {
        let mut out = StepOutput::default();
        if self.is_closed(a.iteration) {
            out.event(ProtocolEvent::Ignored {
                reason: format!("abort for closed iteration {}", a.iteration),
            });
            return Ok(out);
        }
        self.close(a.iteration);
        if self
            .round
            .as_ref()
            .is_some_and(|r| r.iteration == a.iteration)
        {
            self.round = None;
        }
        if let Some(ev) = self.discard_for(a.iteration) {
            out.event(ev);
        }
        self.c_state = self.pending().is_some();
        Ok(out)
    }

    /// Dispatches any inbound message to its handler.
    pub fn receive(&mut self, msg: &Message) -> Result<StepOutput, ProtocolError> {
        match msg {
            Message::App(m) => self.recv_app_message(m),
            Message::PrimaryRequest(_)
            | Message::SecondaryRequest(_)
            | Message::PropagatedRequest(_) => self.recv_checkpoint_request(msg),
            Message::Ack(a) => self.recv_ack(a),
            Message::Commit(c) => self.recv_commit(c),
            Message::Abort(a) => self.recv_abort(a),
        }
    }

    /// The state a node resumes from after restarting at `checkpoint`.
    pub fn restored(
        me: NodeId,
        n: u32,
        head: Option<NodeId>,
        mode: Mode,
        checkpoint: &Checkpoint,
        point: &RestorePoint,
    ) -> Result<Self, ProtocolError> {
        let mut s = Self::new(me, n)?;
        s.head = head;
        s.mode = mode;
        s.csn = point.csn;
        s.known_csn = point.known_csn.clone();
        s.permanent_csn = point.permanent_csn.clone();
        s.closed = point.closed.clone();
        s.app = checkpoint.app_state;
        let mut ckpt = checkpoint.clone();
        ckpt.kind = CheckpointKind::Permanent;
        s.checkpoints.push(ckpt);
        Ok(s)
    }
}

/// Smallest set containing `initiator` that is closed under the dependency
/// rows available (`j` in the set and `rows[j][k]` set puts `k` in it).
pub fn compute_minset(rows: &BTreeMap<NodeId, Vec<bool>>, initiator: NodeId) -> BTreeSet<NodeId> {
    let mut set = BTreeSet::from([initiator]);
    let mut work = vec![initiator];
    while let Some(j) = work.pop() {
        if let Some(row) = rows.get(&j) {
            for k in bits_to_set(row) {
                if set.insert(k) {
                    work.push(k);
                }
            }
        }
    }
    set
}
