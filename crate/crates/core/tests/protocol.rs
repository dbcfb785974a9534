use std::collections::{BTreeMap, BTreeSet};

use manet_ckpt::protocol::compute_minset;
use manet_ckpt::topology::NodeId;
use proptest::prelude::*;

/// Smallest subset containing `init` closed under the rows, by enumeration.
fn brute_force(rows: &BTreeMap<NodeId, Vec<bool>>, n: u32, init: NodeId) -> BTreeSet<NodeId> {
    let mut best: Option<BTreeSet<NodeId>> = None;
    for mask in 0u32..(1 << n) {
        let set: BTreeSet<NodeId> = (1..=n)
            .filter(|i| mask & (1 << (i - 1)) != 0)
            .map(NodeId)
            .collect();
        if !set.contains(&init) {
            continue;
        }
        let closed = set.iter().all(|j| {
            rows[j]
                .iter()
                .enumerate()
                .all(|(k, &b)| !b || set.contains(&NodeId(k as u32 + 1)))
        });
        if closed && best.as_ref().is_none_or(|b| set.len() < b.len()) {
            best = Some(set);
        }
    }
    best.expect("the full set is closed")
}

proptest! {
    #[test]
    fn minset_is_the_smallest_closed_set(
        n in 1u32..=8,
        bits in proptest::collection::vec(any::<bool>(), 64),
        init in 1u32..=8,
    ) {
        let init = NodeId(init.min(n));
        let rows: BTreeMap<NodeId, Vec<bool>> = (1..=n)
            .map(|j| (NodeId(j), (0..n).map(|k| bits[((j - 1) * 8 + k) as usize] && k + 1 != j).collect()))
            .collect();
        prop_assert_eq!(compute_minset(&rows, init), brute_force(&rows, n, init));
    }
}
