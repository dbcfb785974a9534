use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use manet_ckpt::corpus::{generate, sweep, sweep_sequential, CorpusConfig};
use manet_ckpt::netsim::run;
use manet_ckpt::verify::verify_trace;

// Simulate and verify one scenario; the unit of work both sweeps share.
fn check(cfg: &CorpusConfig, seed: u64) -> bool {
    verify_trace(&run(&generate(cfg, seed))).is_clean()
}

fn corpus(c: &mut Criterion) {
    let mut group = c.benchmark_group("corpus");
    group.sample_size(10);
    for scenarios in [64, 256] {
        let cfg = CorpusConfig {
            scenarios,
            ..CorpusConfig::default()
        };
        let seeds = cfg.seeds();
        group.bench_with_input(
            BenchmarkId::new("sequential", scenarios),
            &seeds,
            |b, seeds| b.iter(|| sweep_sequential(seeds, |s| check(&cfg, s))),
        );
        group.bench_with_input(
            BenchmarkId::new("parallel", scenarios),
            &seeds,
            |b, seeds| b.iter(|| sweep(seeds, |s| check(&cfg, s))),
        );
    }
    group.finish();
}

criterion_group!(benches, corpus);
criterion_main!(benches);
