use manet_ckpt::metrics::summarize_metrics;
use manet_ckpt::netsim::{
    fig4, load_scenario, restore_last_permanent, run, run_all_process_baseline, EntryKind,
    EventKind, RestoreError, ScenarioConfig, Trace,
};
use manet_ckpt::protocol::CheckpointKind;
use manet_ckpt::topology::{AdHocGraph, NodeId};
use manet_ckpt::verify::{check_nonblocking, verify_trace};

fn triangle() -> ScenarioConfig {
    ScenarioConfig::new(AdHocGraph::build(3, &[(1, 2), (2, 3), (1, 3)]).unwrap())
}

fn send(from: u32, to: u32, payload: &str) -> EventKind {
    EventKind::SendApp {
        from: NodeId(from),
        to: NodeId(to),
        payload: payload.into(),
        pre_initial: false,
    }
}

fn kinds(t: &Trace) -> Vec<EntryKind> {
    t.entries.iter().map(|e| e.kind).collect()
}

fn permanent_owners(t: &Trace) -> Vec<u32> {
    let mut v: Vec<u32> = t
        .of_kind(EntryKind::CheckpointPromoted)
        .filter(|e| e.detail.ckpt_kind == Some(CheckpointKind::Permanent))
        .map(|e| e.node.0)
        .collect();
    v.sort();
    v
}

#[test]
fn empty_scenario_has_only_bookkeeping() {
    let t = run(&triangle());
    assert!(t
        .entries
        .iter()
        .all(|e| matches!(e.kind, EntryKind::Setup | EntryKind::Final)));
    assert_eq!(t.of_kind(EntryKind::Setup).count(), 3);
    assert!(t.is_complete());
}

#[test]
fn single_send_is_delivered_and_processed() {
    let t = run(&triangle().event(0, send(1, 3, "hello")));
    let body: Vec<EntryKind> = kinds(&t)
        .into_iter()
        .filter(|k| matches!(k, EntryKind::Send | EntryKind::Deliver | EntryKind::Process))
        .collect();
    assert_eq!(
        body,
        [EntryKind::Send, EntryKind::Deliver, EntryKind::Process]
    );
    let deliver = t.of_kind(EntryKind::Deliver).next().unwrap();
    assert_eq!((deliver.node, deliver.time), (NodeId(3), 1));
}

#[test]
fn per_link_latency_delays_delivery() {
    let mut c = triangle().event(0, send(1, 3, "x"));
    c.per_link_latency.insert((NodeId(1), NodeId(3)), 5);
    let t = run(&c);
    assert_eq!(t.of_kind(EntryKind::Process).next().unwrap().time, 5);
}

#[test]
fn channels_are_fifo() {
    let mut c = triangle();
    for i in 0..5 {
        c = c.event(0, send(2, 1, &format!("m{i}")));
    }
    let t = run(&c);
    let order: Vec<u64> = t
        .of_kind(EntryKind::Process)
        .filter_map(|e| e.detail.msg)
        .collect();
    let mut sorted = order.clone();
    sorted.sort();
    assert_eq!(order, sorted);
}

#[test]
fn fig4_commits_the_minimum_set() {
    let t = run(&fig4::scenario());
    assert_eq!(permanent_owners(&t), [1, 2, 4, 5]);
    let promoted_mutable = t
        .of_kind(EntryKind::CheckpointTaken)
        .any(|e| e.node == NodeId(4) && e.detail.ckpt_kind == Some(CheckpointKind::Mutable));
    assert!(promoted_mutable);
    assert!(verify_trace(&t).is_clean());
}

#[test]
fn fig4_baseline_checkpoints_everyone() {
    let t = run_all_process_baseline(&fig4::scenario());
    assert_eq!(permanent_owners(&t), [1, 2, 3, 4, 5]);
    let ours = summarize_metrics(&run(&fig4::scenario())).unwrap();
    let base = summarize_metrics(&t).unwrap();
    assert_eq!((ours.permanents, base.permanents), (4, 5));
}

#[test]
fn busy_window_delay_is_declared() {
    let c = triangle()
        .event(
            0,
            EventKind::BusyWindow {
                node: NodeId(2),
                duration: 3,
            },
        )
        .event(0, send(1, 2, "x"));
    let t = run(&c);
    let p = t.of_kind(EntryKind::Process).next().unwrap();
    assert_eq!(p.time, 3);
    assert!(check_nonblocking(&t).is_empty());
}

#[test]
fn disconnected_node_receives_on_reconnect() {
    let c = triangle()
        .event(
            0,
            EventKind::Disconnect {
                node: NodeId(3),
                until: 4,
            },
        )
        .event(1, send(1, 3, "x"))
        .event(2, send(3, 2, "y"));
    let t = run(&c);
    let at = |node: u32| {
        t.of_kind(EntryKind::Process)
            .find(|e| e.node == NodeId(node))
            .unwrap()
            .time
    };
    assert_eq!(at(3), 4);
    assert_eq!(at(2), 5);
    assert!(verify_trace(&t).is_clean());
}

#[test]
fn same_config_gives_identical_traces() {
    let c = fig4::scenario();
    assert_eq!(run(&c).to_jsonl(), run(&c).to_jsonl());
}

#[test]
fn restore_returns_last_permanent_state() {
    let t = run(&fig4::scenario());
    let s = restore_last_permanent(&t, NodeId(2)).unwrap();
    assert_eq!(s.latest_permanent().map(|c| c.seq), Some(1));
    // P2 had processed m0 and m1 when it checkpointed.
    assert_eq!(s.app.processed, 2);
    let p3 = restore_last_permanent(&t, NodeId(3)).unwrap();
    assert_eq!(p3.app.processed, 0);
    assert!(matches!(
        restore_last_permanent(&t, NodeId(9)),
        Err(RestoreError::UnknownNode(_))
    ));
}

#[test]
fn failure_rolls_back_to_the_permanent() {
    let c = fig4::scenario().event(20, EventKind::Fail { node: NodeId(4) });
    let t = run(&c);
    let fail = t.of_kind(EntryKind::Fail).next().unwrap();
    let before = restore_last_permanent(&run(&fig4::scenario()), NodeId(4)).unwrap();
    assert_eq!(fail.detail.app, Some(before.app));
    assert!(verify_trace(&t).is_clean());
}

#[test]
fn overlapping_initiation_is_reported() {
    let c = fig4::scenario().event(3, EventKind::Initiate { node: NodeId(2) });
    let t = run(&c);
    assert_eq!(t.of_kind(EntryKind::Error).count(), 1);
    assert_eq!(permanent_owners(&t), [1, 2, 4, 5]);
}

#[test]
fn scenario_documents_round_trip() {
    let c = fig4::scenario();
    let back = load_scenario(&c.to_json()).unwrap();
    assert_eq!(back.hash(), c.hash());
    assert_eq!(run(&back).to_jsonl(), run(&c).to_jsonl());
}
