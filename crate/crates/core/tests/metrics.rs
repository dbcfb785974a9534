use manet_ckpt::metrics::{compare, summarize_metrics};
use manet_ckpt::netsim::{fig4, run, run_all_process_baseline, EntryKind, TraceError};

#[test]
fn fig4_counts() {
    let m = summarize_metrics(&run(&fig4::scenario())).unwrap();
    assert_eq!(m.permanents, 4);
    assert_eq!(m.tentatives_taken, 3);
    assert_eq!(
        (m.mutables_taken, m.mutables_promoted, m.mutables_discarded),
        (1, 1, 0)
    );
    assert_eq!(m.app_messages, 6);
    assert_eq!(m.control_total(), 10);
    assert_eq!(m.blocking_time, 0);
    let it = &m.iterations[0];
    assert!(it.committed);
    assert_eq!((it.minset_size, it.cluster_size), (4, 5));
    assert_eq!(m.permanents_per_iteration(), 4.0);
}

#[test]
fn baseline_comparison() {
    let ours = summarize_metrics(&run(&fig4::scenario())).unwrap();
    let base = summarize_metrics(&run_all_process_baseline(&fig4::scenario())).unwrap();
    let rows = compare(&ours, &base);
    let row = |k: &str| rows.iter().find(|r| r.0 == k).map(|r| (r.1, r.2)).unwrap();
    assert_eq!(row("permanents"), (4, 5));
    assert_eq!(row("control_messages"), (10, 12));
    assert_eq!(row("control.PropagatedRequest"), (1, 0));
}

#[test]
fn mutables_are_accounted_for() {
    let m = summarize_metrics(&run(&fig4::scenario())).unwrap();
    assert_eq!(
        m.mutables_taken,
        m.mutables_promoted + m.mutables_discarded + m.mutables_pending
    );
}

#[test]
fn truncated_trace_is_rejected() {
    let mut t = run(&fig4::scenario());
    t.entries.retain(|e| e.kind != EntryKind::Final);
    assert!(matches!(summarize_metrics(&t), Err(TraceError::Truncated)));
}
