//! Random single-cluster scenarios and sweeps over them.
//!
//! With the `parallel` feature (on by default) [`sweep`] fans out over a
//! rayon pool; without it, or through [`sweep_sequential`], runs go one
//! after another. Each run owns its scenario, so the results are the same
//! either way.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::netsim::{EventKind, ScenarioConfig, Time};
use crate::topology::{elect_clusterheads, AdHocGraph, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorpusConfig {
    pub scenarios: usize,
    pub seed: u64,
    pub min_nodes: u32,
    pub max_nodes: u32,
    pub max_app_messages: usize,
    pub max_initiations: usize,
    pub max_busy_windows: usize,
    pub max_busy_duration: Time,
    pub max_disconnects: usize,
    /// Per-link latencies are drawn from `1..=max_link_latency`; 1 keeps
    /// every link at the default.
    pub max_link_latency: Time,
    /// Events are scheduled in `0..horizon`.
    pub horizon: Time,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            scenarios: 1000,
            seed: 0x5eed,
            min_nodes: 3,
            max_nodes: 8,
            max_app_messages: 30,
            max_initiations: 3,
            max_busy_windows: 3,
            max_busy_duration: 4,
            max_disconnects: 0,
            max_link_latency: 1,
            horizon: 40,
        }
    }
}

impl CorpusConfig {
    /// Seed of the `i`th scenario.
    pub fn scenario_seed(&self, i: usize) -> u64 {
        self.seed
            .wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(i as u64)
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.scenarios).map(|i| self.scenario_seed(i)).collect()
    }
}

/// A connected graph on `n` nodes: a random spanning tree plus up to `n`
/// extra edges.
pub fn random_connected_graph(rng: &mut impl Rng, n: u32) -> AdHocGraph {
    let mut edges = std::collections::BTreeSet::new();
    for v in 2..=n {
        edges.insert((rng.gen_range(1..v), v));
    }
    if n > 1 {
        for _ in 0..rng.gen_range(0..=n) {
            let a = rng.gen_range(1..=n);
            let b = rng.gen_range(1..=n);
            if a != b {
                edges.insert((a.min(b), a.max(b)));
            }
        }
    }
    let edges: Vec<(u32, u32)> = edges.into_iter().collect();
    AdHocGraph::build(n, &edges).expect("generated graph is valid")
}

/// A connected graph on `n` nodes that elects exactly one clusterhead:
/// one hub joined to everyone plus random chords, resampled until the
/// election agrees.
fn single_cluster_graph(rng: &mut ChaCha8Rng, n: u32) -> (AdHocGraph, NodeId) {
    loop {
        let hub = rng.gen_range(1..=n);
        let density: f64 = rng.gen_range(0.0..0.6);
        let mut edges = Vec::new();
        for a in 1..=n {
            for b in a + 1..=n {
                if a == hub || b == hub || rng.gen_bool(density) {
                    edges.push((a, b));
                }
            }
        }
        let g = AdHocGraph::build(n, &edges).expect("generated graph is valid");
        let a = elect_clusterheads(&g);
        let heads: Vec<NodeId> = a.heads().collect();
        if let [head] = heads[..] {
            return (g, head);
        }
    }
}

/// Scenario number `seed`: one cluster, random application traffic, a few
/// initiations at the clusterhead and a few busy windows.
pub fn generate(cfg: &CorpusConfig, seed: u64) -> ScenarioConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(cfg.min_nodes..=cfg.max_nodes);
    let (graph, head) = single_cluster_graph(&mut rng, n);
    let mut c = ScenarioConfig::new(graph);
    c.seed = seed;
    let mut events: Vec<(Time, EventKind)> = Vec::new();
    let sends = rng.gen_range(0..=cfg.max_app_messages);
    let nodes: Vec<u32> = (1..=n).collect();
    for i in 0..sends {
        let pair: Vec<u32> = nodes.choose_multiple(&mut rng, 2).copied().collect();
        events.push((
            rng.gen_range(0..cfg.horizon),
            EventKind::SendApp {
                from: NodeId(pair[0]),
                to: NodeId(pair[1]),
                payload: format!("p{i}"),
                pre_initial: false,
            },
        ));
    }
    for _ in 0..rng.gen_range(1..=cfg.max_initiations) {
        events.push((
            rng.gen_range(0..cfg.horizon),
            EventKind::Initiate { node: head },
        ));
    }
    for _ in 0..rng.gen_range(0..=cfg.max_busy_windows) {
        events.push((
            rng.gen_range(0..cfg.horizon),
            EventKind::BusyWindow {
                node: NodeId(rng.gen_range(1..=n)),
                duration: rng.gen_range(1..=cfg.max_busy_duration),
            },
        ));
    }
    for _ in 0..rng.gen_range(0..=cfg.max_disconnects) {
        let at = rng.gen_range(0..cfg.horizon);
        events.push((
            at,
            EventKind::Disconnect {
                node: NodeId(rng.gen_range(1..=n)),
                until: at + rng.gen_range(1..=cfg.max_busy_duration),
            },
        ));
    }
    if cfg.max_link_latency > 1 {
        for (a, b) in c.graph.edges() {
            let t = rng.gen_range(1..=cfg.max_link_latency);
            c.per_link_latency.insert((NodeId(a), NodeId(b)), t);
        }
    }
    events.sort_by_key(|(at, _)| *at);
    for (at, kind) in events {
        c = c.event(at, kind);
    }
    c
}

pub fn sweep_sequential<R, F>(seeds: &[u64], f: F) -> Vec<R>
where
    F: Fn(u64) -> R,
{
    seeds.iter().map(|&s| f(s)).collect()
}

#[cfg(feature = "parallel")]
pub fn sweep<R, F>(seeds: &[u64], f: F) -> Vec<R>
where
    F: Fn(u64) -> R + Sync + Send,
    R: Send,
{
    use rayon::prelude::*;
    seeds.par_iter().map(|&s| f(s)).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn sweep<R, F>(seeds: &[u64], f: F) -> Vec<R>
where
    F: Fn(u64) -> R + Sync + Send,
    R: Send,
{
    sweep_sequential(seeds, f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_scenarios_respect_bounds() {
        let cfg = CorpusConfig::default();
        for seed in cfg.seeds().into_iter().take(50) {
            let c = generate(&cfg, seed);
            let n = c.graph.n();
            assert!((3..=8).contains(&n));
            assert_eq!(elect_clusterheads(&c.graph).heads().count(), 1);
            let sends = c
                .events
                .iter()
                .filter(|e| matches!(e.kind, EventKind::SendApp { .. }))
                .count();
            let inits = c
                .events
                .iter()
                .filter(|e| matches!(e.kind, EventKind::Initiate { .. }))
                .count();
            assert!(sends <= 30);
            assert!((1..=3).contains(&inits));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = CorpusConfig::default();
        assert_eq!(generate(&cfg, 17).to_json(), generate(&cfg, 17).to_json());
        assert_ne!(generate(&cfg, 17).to_json(), generate(&cfg, 18).to_json());
    }

    #[test]
    fn parallel_and_sequential_agree() {
        let seeds: Vec<u64> = (0..64).collect();
        let f = |s: u64| generate(&CorpusConfig::default(), s).hash();
        assert_eq!(sweep(&seeds, f), sweep_sequential(&seeds, f));
    }
}
