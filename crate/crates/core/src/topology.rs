//! Network graph, weight-based clusterhead election and the clustering
//! property checks (dominance, independence, two-hop).

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Network-wide node identifier, contiguous in `1..=n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn get(self) -> u32 {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopologyError {
    #[error("graph must contain at least one node")]
    Empty,
    #[error("node {0} is outside 1..={1}")]
    OutOfRange(u32, u32),
    #[error("self-loop on node {0}")]
    SelfLoop(u32),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(u32, u32),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("node {0} is not a clusterhead")]
    NotAHead(NodeId),
    #[error("graph is not connected")]
    Disconnected,
}

/// Undirected simple graph over nodes `1..=n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdHocGraph {
    n: u32,
    adj: Vec<BTreeSet<NodeId>>,
}

impl AdHocGraph {
    /// Validates and builds a graph. Edges are unordered; `(a, b)` and
    /// `(b, a)` are the same edge and listing both is a duplicate.
    pub fn build(n: u32, edges: &[(u32, u32)]) -> Result<Self, TopologyError> {
        if n == 0 {
            return Err(TopologyError::Empty);
        }
        let mut adj = vec![BTreeSet::new(); n as usize];
        for &(a, b) in edges {
            for x in [a, b] {
                if x == 0 || x > n {
                    return Err(TopologyError::OutOfRange(x, n));
                }
            }
            if a == b {
                return Err(TopologyError::SelfLoop(a));
            }
            let (lo, hi) = (a.min(b), a.max(b));
            if !adj[(lo - 1) as usize].insert(NodeId(hi)) {
                return Err(TopologyError::DuplicateEdge(lo, hi));
            }
            adj[(hi - 1) as usize].insert(NodeId(lo));
        }
        Ok(Self { n, adj })
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        (1..=self.n).map(NodeId)
    }

    pub fn contains(&self, x: NodeId) -> bool {
        x.0 >= 1 && x.0 <= self.n
    }

    fn check(&self, x: NodeId) -> Result<(), TopologyError> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(TopologyError::UnknownNode(x))
        }
    }

    pub fn neighbors(&self, x: NodeId) -> Result<&BTreeSet<NodeId>, TopologyError> {
        self.check(x)?;
        Ok(&self.adj[(x.0 - 1) as usize])
    }

    pub fn are_adjacent(&self, a: NodeId, b: NodeId) -> bool {
        self.contains(a) && self.adj[(a.0 - 1) as usize].contains(&b)
    }

    pub fn degree(&self, x: NodeId) -> Result<usize, TopologyError> {
        Ok(self.neighbors(x)?.len())
    }

    /// Normalized edge list, each pair `(lo, hi)` in ascending order.
    pub fn edges(&self) -> Vec<(u32, u32)> {
        self.nodes()
            .flat_map(|a| {
                self.adj[(a.0 - 1) as usize]
                    .iter()
                    .filter(move |b| b.0 > a.0)
                    .map(move |b| (a.0, b.0))
            })
            .collect()
    }

    /// Sum of neighbor degrees plus `id / (n + 1)`, kept exact.
    pub fn weight(&self, x: NodeId) -> Result<Weight, TopologyError> {
        let sum: u64 = self
            .neighbors(x)?
            .iter()
            .map(|&y| self.adj[(y.0 - 1) as usize].len() as u64)
            .sum();
        let den = u64::from(self.n) + 1;
        Ok(Weight {
            numerator: sum * den + u64::from(x.0),
            denominator: den,
        })
    }

    pub fn is_connected(&self) -> bool {
        self.bfs(NodeId(1), usize::MAX).len() == self.n as usize
    }

    /// Nodes within `max_depth` hops of `from`, with their distances.
    fn bfs(&self, from: NodeId, max_depth: usize) -> BTreeMap<NodeId, usize> {
        let mut dist = BTreeMap::new();
        dist.insert(from, 0);
        let mut queue = VecDeque::from([from]);
        while let Some(x) = queue.pop_front() {
            let d = dist[&x];
            if d == max_depth {
                continue;
            }
            for &y in &self.adj[(x.0 - 1) as usize] {
                if let std::collections::btree_map::Entry::Vacant(slot) = dist.entry(y) {
                    slot.insert(d + 1);
                    queue.push_back(y);
                }
            }
        }
        dist
    }

    /// Hop distance, `None` when unreachable.
    pub fn distance(&self, a: NodeId, b: NodeId) -> Option<usize> {
        self.bfs(a, usize::MAX).get(&b).copied()
    }

    /// Shortest path from `a` to `b` inclusive, breaking ties toward lower ids.
    pub fn shortest_path(&self, a: NodeId, b: NodeId) -> Option<Vec<NodeId>> {
        let mut prev: BTreeMap<NodeId, NodeId> = BTreeMap::new();
        let mut seen = BTreeSet::from([a]);
        let mut queue = VecDeque::from([a]);
        while let Some(x) = queue.pop_front() {
            if x == b {
                let mut path = vec![b];
                let mut cur = b;
                while let Some(&p) = prev.get(&cur) {
                    path.push(p);
                    cur = p;
                }
                path.reverse();
                return Some(path);
            }
            for &y in &self.adj[(x.0 - 1) as usize] {
                if seen.insert(y) {
                    prev.insert(y, x);
                    queue.push_back(y);
                }
            }
        }
        None
    }

    /// Same node space with every edge touching `x` removed.
    pub fn without(&self, x: NodeId) -> Result<Self, TopologyError> {
        self.check(x)?;
        let mut g = self.clone();
        let nbrs = std::mem::take(&mut g.adj[(x.0 - 1) as usize]);
        for y in nbrs {
            g.adj[(y.0 - 1) as usize].remove(&x);
        }
        Ok(g)
    }
}

/// Exact node weight `numerator / denominator`. Every weight within one
/// graph shares the denominator `n + 1`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Weight {
    pub numerator: u64,
    pub denominator: u64,
}

impl PartialEq for Weight {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Weight {}

impl PartialOrd for Weight {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Weight {
    fn cmp(&self, other: &Self) -> Ordering {
        let lhs = u128::from(self.numerator) * u128::from(other.denominator);
        let rhs = u128::from(other.numerator) * u128::from(self.denominator);
        lhs.cmp(&rhs)
    }
}

impl fmt::Display for Weight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.numerator, self.denominator)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    ClusterHead,
    Ordinary,
    Gateway,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::ClusterHead => "ClusterHead",
            Role::Ordinary => "Ordinary",
            Role::Gateway => "Gateway",
        })
    }
}

/// Per-node role and cluster membership.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub role: BTreeMap<NodeId, Role>,
    pub cluster_of: BTreeMap<NodeId, NodeId>,
}

impl ClusterAssignment {
    pub fn heads(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.role
            .iter()
            .filter(|(_, r)| **r == Role::ClusterHead)
            .map(|(&x, _)| x)
    }

    pub fn head_of(&self, x: NodeId) -> Option<NodeId> {
        self.cluster_of.get(&x).copied()
    }

    pub fn is_head(&self, x: NodeId) -> bool {
        self.role.get(&x) == Some(&Role::ClusterHead)
    }

    /// Members of the cluster headed by `head`, ascending, head included.
    pub fn members(&self, head: NodeId) -> Vec<NodeId> {
        self.cluster_of
            .iter()
            .filter(|(_, &h)| h == head)
            .map(|(&x, _)| x)
            .collect()
    }

    pub fn same_cluster(&self, a: NodeId, b: NodeId) -> bool {
        matches!((self.head_of(a), self.head_of(b)), (Some(x), Some(y)) if x == y)
    }
}

fn by_weight_desc(g: &AdHocGraph, nodes: impl Iterator<Item = NodeId>) -> Vec<(Weight, NodeId)> {
    let mut order: Vec<(Weight, NodeId)> = nodes
        .map(|x| (g.weight(x).expect("node in graph"), x))
        .collect();
    order.sort_by_key(|&(w, _)| std::cmp::Reverse(w));
    order
}

/// Greedy election: nodes are visited in strictly decreasing weight; a node
/// with no clusterhead neighbor becomes a head, any other node joins its
/// highest-weight neighboring head.
pub fn elect_clusterheads(g: &AdHocGraph) -> ClusterAssignment {
    let mut out = ClusterAssignment::default();
    assign_greedy(g, by_weight_desc(g, g.nodes()), &mut out);
    out
}

fn assign_greedy(g: &AdHocGraph, order: Vec<(Weight, NodeId)>, out: &mut ClusterAssignment) {
    for (_, x) in order {
        let best_head = g
            .neighbors(x)
            .expect("node in graph")
            .iter()
            .filter(|y| out.is_head(**y))
            .max_by_key(|y| g.weight(**y).expect("node in graph"))
            .copied();
        match best_head {
            Some(h) => {
                out.role.insert(x, Role::Ordinary);
                out.cluster_of.insert(x, h);
            }
            None => {
                out.role.insert(x, Role::ClusterHead);
                out.cluster_of.insert(x, x);
            }
        }
    }
}

/// Relabels every non-head with a neighbor in a foreign cluster as a
/// gateway. Ordinary nodes without such a neighbor are relabeled back to
/// `Ordinary`, which makes the operation idempotent.
pub fn classify_gateways(g: &AdHocGraph, a: &ClusterAssignment) -> ClusterAssignment {
    let mut out = a.clone();
    for (&x, role) in out.role.iter_mut() {
        if *role == Role::ClusterHead {
            continue;
        }
        let foreign = g
            .neighbors(x)
            .map(|nb| {
                nb.iter()
                    .any(|y| a.cluster_of.contains_key(y) && !a.same_cluster(x, *y))
            })
            .unwrap_or(false);
        *role = if foreign {
            Role::Gateway
        } else {
            Role::Ordinary
        };
    }
    out
}

/// Violations found by [`validate_cluster_properties`]. Each list holds the
/// witnesses for one property; an empty list means the property holds.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct PropertyReport {
    /// Non-heads without any clusterhead neighbor.
    pub dominance: Vec<NodeId>,
    /// Adjacent clusterhead pairs.
    pub independence: Vec<(NodeId, NodeId)>,
    /// Same-cluster pairs further than two hops apart.
    pub two_hop: Vec<(NodeId, NodeId)>,
    /// Nodes whose `cluster_of` is not themselves (heads) or a neighboring
    /// head (members).
    pub membership: Vec<NodeId>,
}

impl PropertyReport {
    pub fn passed(&self) -> bool {
        self.dominance.is_empty()
            && self.independence.is_empty()
            && self.two_hop.is_empty()
            && self.membership.is_empty()
    }
}

pub fn validate_cluster_properties(g: &AdHocGraph, a: &ClusterAssignment) -> PropertyReport {
    let mut report = PropertyReport::default();
    for (&x, &role) in &a.role {
        let Ok(nbrs) = g.neighbors(x) else {
            report.membership.push(x);
            continue;
        };
        let head = a.head_of(x);
        if role == Role::ClusterHead {
            if head != Some(x) {
                report.membership.push(x);
            }
            for &y in nbrs {
                if y > x && a.is_head(y) {
                    report.independence.push((x, y));
                }
            }
        } else {
            if !nbrs.iter().any(|y| a.is_head(*y)) {
                report.dominance.push(x);
            }
            match head {
                Some(h) if nbrs.contains(&h) && a.is_head(h) => {}
                _ => report.membership.push(x),
            }
        }
    }
    let mut clusters: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
    for (&x, &h) in &a.cluster_of {
        clusters.entry(h).or_default().push(x);
    }
    for members in clusters.values() {
        for (i, &x) in members.iter().enumerate() {
            if !g.contains(x) {
                continue;
            }
            let near = g.bfs(x, 2);
            for &y in &members[i + 1..] {
                if !near.contains_key(&y) {
                    report.two_hop.push((x, y));
                }
            }
        }
    }
    report
}

/// Re-clusters the members orphaned by the failure of head `failed`.
///
/// The failed node is dropped from the result and from the graph view used
/// for the new weights. Orphans are visited by decreasing weight and either
/// join the best neighboring head (surviving or newly elected) or become
/// heads themselves. Returns the updated graph view alongside the
/// assignment.
pub fn reelect_after_head_failure(
    g: &AdHocGraph,
    a: &ClusterAssignment,
    failed: NodeId,
) -> Result<(AdHocGraph, ClusterAssignment), TopologyError> {
    if !g.contains(failed) {
        return Err(TopologyError::UnknownNode(failed));
    }
    if !a.is_head(failed) {
        return Err(TopologyError::NotAHead(failed));
    }
    let view = g.without(failed)?;
    let orphans: Vec<NodeId> = a
        .members(failed)
        .into_iter()
        .filter(|&x| x != failed)
        .collect();
    let mut out = a.clone();
    out.role.remove(&failed);
    out.cluster_of.remove(&failed);
    for x in &orphans {
        out.role.remove(x);
        out.cluster_of.remove(x);
    }
    assign_greedy(&view, by_weight_desc(&view, orphans.into_iter()), &mut out);
    // Gateway labels may change for former neighbors of the orphans.
    let relabeled = classify_gateways(&view, &strip_gateways(&out));
    Ok((view, relabeled))
}

fn strip_gateways(a: &ClusterAssignment) -> ClusterAssignment {
    let mut out = a.clone();
    for role in out.role.values_mut() {
        if *role == Role::Gateway {
            *role = Role::Ordinary;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> AdHocGraph {
        AdHocGraph::build(3, &[(1, 2), (2, 3)]).unwrap()
    }

    #[test]
    fn build_rejects_bad_edges() {
        assert_eq!(
            AdHocGraph::build(3, &[(1, 1)]),
            Err(TopologyError::SelfLoop(1))
        );
        assert_eq!(
            AdHocGraph::build(3, &[(1, 2), (2, 1)]),
            Err(TopologyError::DuplicateEdge(1, 2))
        );
        assert_eq!(
            AdHocGraph::build(3, &[(1, 4)]),
            Err(TopologyError::OutOfRange(4, 3))
        );
        assert_eq!(AdHocGraph::build(0, &[]), Err(TopologyError::Empty));
    }

    #[test]
    fn single_isolated_node() {
        let g = AdHocGraph::build(1, &[]).unwrap();
        assert_eq!(g.degree(NodeId(1)).unwrap(), 0);
        let w = g.weight(NodeId(1)).unwrap();
        assert_eq!((w.numerator, w.denominator), (1, 2));
        let a = elect_clusterheads(&g);
        assert!(a.is_head(NodeId(1)));
        assert!(validate_cluster_properties(&g, &a).passed());
    }

    #[test]
    fn path_degrees_and_weights() {
        let g = path3();
        assert_eq!(g.degree(NodeId(2)).unwrap(), 2);
        assert_eq!(g.degree(NodeId(1)).unwrap(), 1);
        // 2 + 2/4
        let w2 = g.weight(NodeId(2)).unwrap();
        assert_eq!(
            w2,
            Weight {
                numerator: 5,
                denominator: 2
            }
        );
        assert_eq!(w2.to_string(), "10/4");
        assert_eq!(g.weight(NodeId(1)).unwrap().to_string(), "9/4");
        assert_eq!(g.weight(NodeId(3)).unwrap().to_string(), "11/4");
        assert!(matches!(
            g.degree(NodeId(4)),
            Err(TopologyError::UnknownNode(_))
        ));
    }

    #[test]
    fn stated_degree_fixture() {
        // Node 2 isolated; 1, 3, 4 with degrees 2, 2, 3.
        let g = AdHocGraph::build(5, &[(1, 4), (1, 3), (3, 4), (4, 5)]).unwrap();
        let degrees: Vec<usize> = (1..=4).map(|i| g.degree(NodeId(i)).unwrap()).collect();
        assert_eq!(degrees, vec![2, 0, 2, 3]);
    }

    #[test]
    fn path_election_hand_trace() {
        let g = path3();
        let a = elect_clusterheads(&g);
        assert!(a.is_head(NodeId(3)));
        assert!(a.is_head(NodeId(1)));
        assert_eq!(a.head_of(NodeId(2)), Some(NodeId(3)));
        assert!(validate_cluster_properties(&g, &a).passed());
    }

    #[test]
    fn gateways_between_two_clusters() {
        // Heads 1 and 6; 2 joins 1, 5 joins 6; 2-5 is the bridge.
        let g = AdHocGraph::build(6, &[(1, 2), (1, 3), (1, 4), (2, 5), (5, 6), (6, 3)]).unwrap();
        let mut a = ClusterAssignment::default();
        for (x, h) in [(1, 1), (2, 1), (3, 1), (4, 1), (5, 6), (6, 6)] {
            a.role.insert(
                NodeId(x),
                if x == h {
                    Role::ClusterHead
                } else {
                    Role::Ordinary
                },
            );
            a.cluster_of.insert(NodeId(x), NodeId(h));
        }
        let c = classify_gateways(&g, &a);
        assert_eq!(c.role[&NodeId(2)], Role::Gateway);
        assert_eq!(c.role[&NodeId(5)], Role::Gateway);
        assert_eq!(c.role[&NodeId(3)], Role::Gateway);
        assert_eq!(c.role[&NodeId(4)], Role::Ordinary);
        assert_eq!(classify_gateways(&g, &c), c);
        assert!(validate_cluster_properties(&g, &c).passed());
    }

    #[test]
    fn single_cluster_has_no_gateways() {
        let g = AdHocGraph::build(4, &[(1, 2), (1, 3), (1, 4), (2, 3), (2, 4), (3, 4)]).unwrap();
        let a = classify_gateways(&g, &elect_clusterheads(&g));
        assert_eq!(a.heads().count(), 1);
        assert!(a.role.values().all(|r| *r != Role::Gateway));
    }

    #[test]
    fn adjacent_heads_fail_independence() {
        let g = path3();
        let mut a = ClusterAssignment::default();
        for x in 1..=3 {
            a.role.insert(NodeId(x), Role::ClusterHead);
            a.cluster_of.insert(NodeId(x), NodeId(x));
        }
        let r = validate_cluster_properties(&g, &a);
        assert_eq!(
            r.independence,
            vec![(NodeId(1), NodeId(2)), (NodeId(2), NodeId(3))]
        );
        assert!(!r.passed());
    }

    #[test]
    fn star_with_center_head_passes() {
        let g = AdHocGraph::build(5, &[(1, 2), (1, 3), (1, 4), (1, 5)]).unwrap();
        let mut a = ClusterAssignment::default();
        for x in 1..=5 {
            a.role.insert(
                NodeId(x),
                if x == 1 {
                    Role::ClusterHead
                } else {
                    Role::Ordinary
                },
            );
            a.cluster_of.insert(NodeId(x), NodeId(1));
        }
        assert!(validate_cluster_properties(&g, &a).passed());
    }

    #[test]
    fn dominance_and_two_hop_witnesses() {
        // 1-2-3-4 with 1 head over everyone.
        let g = AdHocGraph::build(4, &[(1, 2), (2, 3), (3, 4)]).unwrap();
        let mut a = ClusterAssignment::default();
        for x in 1..=4 {
            a.role.insert(
                NodeId(x),
                if x == 1 {
                    Role::ClusterHead
                } else {
                    Role::Ordinary
                },
            );
            a.cluster_of.insert(NodeId(x), NodeId(1));
        }
        let r = validate_cluster_properties(&g, &a);
        assert_eq!(r.dominance, vec![NodeId(3), NodeId(4)]);
        assert!(r.two_hop.contains(&(NodeId(1), NodeId(4))));
        assert!(r.membership.contains(&NodeId(3)));
    }

    #[test]
    fn reelection_two_node_cluster() {
        let g = AdHocGraph::build(2, &[(1, 2)]).unwrap();
        let a = elect_clusterheads(&g);
        let head = a.heads().next().unwrap();
        let other = NodeId(3 - head.0);
        let (view, b) = reelect_after_head_failure(&g, &a, head).unwrap();
        assert!(b.is_head(other));
        assert!(!b.role.contains_key(&head));
        assert!(validate_cluster_properties(&view, &b).passed());
        assert_eq!(
            reelect_after_head_failure(&g, &a, other),
            Err(TopologyError::NotAHead(other))
        );
    }

    #[test]
    fn reelection_star_center() {
        let g = AdHocGraph::build(6, &[(1, 2), (1, 3), (1, 4), (1, 5), (1, 6), (2, 3), (4, 5)])
            .unwrap();
        let a = elect_clusterheads(&g);
        assert!(a.is_head(NodeId(1)));
        let (view, b) = reelect_after_head_failure(&g, &a, NodeId(1)).unwrap();
        assert_eq!(b.role.len(), 5);
        assert!(validate_cluster_properties(&view, &b).passed());
    }

    #[test]
    fn shortest_path_prefers_low_ids() {
        let g = AdHocGraph::build(4, &[(1, 2), (1, 3), (2, 4), (3, 4)]).unwrap();
        assert_eq!(
            g.shortest_path(NodeId(1), NodeId(4)).unwrap(),
            vec![NodeId(1), NodeId(2), NodeId(4)]
        );
        let d = AdHocGraph::build(3, &[(1, 2)]).unwrap();
        assert!(!d.is_connected());
        assert_eq!(d.shortest_path(NodeId(1), NodeId(3)), None);
    }
}
