//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit status
//! if any fails.

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use manet_ckpt::corpus::{generate, random_connected_graph, sweep, CorpusConfig};
use manet_ckpt::metrics::summarize_metrics;
use manet_ckpt::netsim::{
    fig4, run, run_all_process_baseline, run_with, EntryKind, Mutant, SimOptions, Trace,
};
use manet_ckpt::protocol::CheckpointKind;
use manet_ckpt::topology::{elect_clusterheads, validate_cluster_properties, NodeId};
use manet_ckpt::verify::{
    check_at_most_one, check_commit_acks, check_member_senders, check_nonblocking,
    committed_iterations, committed_set, find_orphans, mutate, oracle_minimum_set,
    snapshot_of_iteration, verify_trace,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(limit: Duration, started: Instant) -> Result<(), String> {
    let took = started.elapsed();
    ensure(took < limit, || format!("took {took:?}, limit {limit:?}"))
}

fn permanent_owners(t: &Trace) -> BTreeSet<NodeId> {
    t.of_kind(EntryKind::CheckpointPromoted)
        .filter(|e| e.detail.ckpt_kind == Some(CheckpointKind::Permanent))
        .map(|e| e.node)
        .collect()
}

fn corpus_traces() -> Vec<Trace> {
    let cfg = CorpusConfig::default();
    sweep(&cfg.seeds(), |s| run(&generate(&cfg, s)))
}

fn ac1() -> Outcome {
    let started = Instant::now();
    let t = run(&fig4::scenario());
    let its = committed_iterations(&t);
    ensure(its.len() == 1, || {
        format!("{} committed iterations", its.len())
    })?;
    let it = its[0];
    let want: BTreeSet<NodeId> = [1, 2, 4, 5].map(NodeId).into();
    let set = committed_set(&t, it).map_err(|e| e.to_string())?;
    ensure(set == want, || format!("committed {set:?}"))?;
    let owners = permanent_owners(&t);
    ensure(owners == want, || format!("permanents at {owners:?}"))?;
    let missing = check_commit_acks(&t, it).map_err(|e| e.to_string())?;
    ensure(missing.is_empty(), || {
        format!("commit before acks of {missing:?}")
    })?;
    within(Duration::from_secs(1), started)?;
    Ok(format!(
        "committed {{1,2,4,5}}, P3 untouched, in {:?}",
        started.elapsed()
    ))
}

fn ac2(traces: &[Trace]) -> Outcome {
    let mut iterations = 0;
    for (i, t) in traces.iter().enumerate() {
        for it in committed_iterations(t) {
            iterations += 1;
            let snap = snapshot_of_iteration(t, it).map_err(|e| e.to_string())?;
            let report = find_orphans(t, &snap);
            ensure(report.is_empty(), || {
                format!("scenario {i}, iteration {it}: {:?}", report.orphans)
            })?;
        }
    }
    ensure(traces.len() >= 1000, || {
        format!("only {} scenarios", traces.len())
    })?;
    Ok(format!(
        "{} scenarios, {iterations} committed iterations, no orphans",
        traces.len()
    ))
}

fn ac3(traces: &[Trace]) -> Outcome {
    let mut iterations = 0;
    let mut proper = 0;
    for (i, t) in traces.iter().enumerate() {
        let cluster = t.of_kind(EntryKind::Setup).count();
        for it in committed_iterations(t) {
            iterations += 1;
            let set = committed_set(t, it).map_err(|e| e.to_string())?;
            let oracle = oracle_minimum_set(t, it).map_err(|e| e.to_string())?;
            ensure(set == oracle, || {
                format!("scenario {i}, {it}: committed {set:?}, oracle {oracle:?}")
            })?;
            let idle = check_member_senders(t, it).map_err(|e| e.to_string())?;
            ensure(idle.is_empty(), || {
                format!("scenario {i}, {it}: idle members {idle:?}")
            })?;
            let extra = check_at_most_one(t, it);
            ensure(extra.is_empty(), || {
                format!("scenario {i}, {it}: {extra:?}")
            })?;
            if set.len() < cluster {
                proper += 1;
            }
        }
    }
    Ok(format!(
        "{iterations} iterations match the oracle set ({proper} smaller than the cluster)"
    ))
}

fn ac4(traces: &[Trace]) -> Outcome {
    for (i, t) in traces.iter().enumerate() {
        let v = check_nonblocking(t);
        ensure(v.is_empty(), || format!("scenario {i}: {v:?}"))?;
    }
    let cfg = CorpusConfig::default();
    let opts = SimOptions {
        mutant: Some(Mutant::BlockAppDuringCState),
        ..SimOptions::default()
    };
    let caught = sweep(&cfg.seeds(), |s| {
        !check_nonblocking(&run_with(&generate(&cfg, s), &opts)).is_empty()
    })
    .into_iter()
    .filter(|&c| c)
    .count();
    ensure(caught > 0, || "blocking mutant never detected".into())?;
    Ok(format!(
        "corpus non-blocking; blocking mutant flagged in {caught} runs"
    ))
}

fn ac5() -> Outcome {
    let started = Instant::now();
    let graphs = 500;
    let failures: Vec<String> = sweep(&(0..graphs).collect::<Vec<u64>>(), |s| {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let n = rand::Rng::gen_range(&mut rng, 1..=50);
        let g = random_connected_graph(&mut rng, n);
        let a = elect_clusterheads(&g);
        let report = validate_cluster_properties(&g, &a);
        let weights: BTreeSet<_> = g.nodes().map(|x| g.weight(x).expect("node")).collect();
        if !report.passed() {
            Some(format!("graph {s}: {report:?}"))
        } else if weights.len() != n as usize {
            Some(format!("graph {s}: repeated weight"))
        } else {
            None
        }
    })
    .into_iter()
    .flatten()
    .collect();
    ensure(failures.is_empty(), || failures.join("; "))?;
    within(Duration::from_secs(30), started)?;
    Ok(format!("{graphs} graphs pass, in {:?}", started.elapsed()))
}

fn ac6() -> Outcome {
    let cfg = CorpusConfig {
        scenarios: 100,
        ..CorpusConfig::default()
    };
    let mut strict = 0;
    let rows = sweep(&cfg.seeds(), |s| {
        let c = generate(&cfg, s);
        let t = run(&c);
        let ours = summarize_metrics(&t).map_err(|e| e.to_string())?;
        let base = summarize_metrics(&run_all_process_baseline(&c)).map_err(|e| e.to_string())?;
        let n = c.graph.n() as usize;
        let proper = committed_iterations(&t)
            .into_iter()
            .any(|it| oracle_minimum_set(&t, it).is_ok_and(|o| o.len() < n));
        Ok::<_, String>((
            s,
            ours.permanents_per_iteration(),
            base.permanents_per_iteration(),
            proper,
        ))
    });
    for row in rows {
        let (s, ours, base, proper) = row?;
        ensure(ours <= base, || format!("seed {s}: {ours} > {base}"))?;
        if proper {
            ensure(ours < base, || format!("seed {s}: {ours} not below {base}"))?;
            strict += 1;
        }
    }
    Ok(format!(
        "100 scenarios at or below the baseline, {strict} strictly below"
    ))
}

fn ac7() -> Outcome {
    let cfg = CorpusConfig {
        scenarios: 200,
        max_disconnects: 2,
        max_link_latency: 3,
        ..CorpusConfig::default()
    };
    let seeds = cfg.seeds();
    let first = sweep(&seeds, |s| run(&generate(&cfg, s)).to_jsonl());
    let second: Vec<String> = seeds
        .iter()
        .map(|&s| run(&generate(&cfg, s)).to_jsonl())
        .collect();
    let differ = first.iter().zip(&second).filter(|(a, b)| a != b).count();
    ensure(differ == 0, || {
        format!("{differ} traces differ between runs")
    })?;
    let f = run(&fig4::scenario()).to_jsonl();
    ensure(f == run(&fig4::scenario()).to_jsonl(), || {
        "fig4 trace differs".into()
    })?;
    Ok(format!("{} seeds replayed byte for byte", seeds.len()))
}

fn ac8(traces: &[Trace]) -> Outcome {
    type Mutation = fn(&Trace) -> Option<Trace>;
    let mutations: [(&str, Mutation); 3] = [
        ("drop-request", mutate::drop_request),
        ("commit-before-ack", mutate::commit_before_ack),
        ("inject-orphan", mutate::inject_orphan),
    ];
    let mut summary = Vec::new();
    for (name, m) in mutations {
        let mut applied = 0;
        for (i, t) in traces.iter().enumerate() {
            if let Some(bad) = m(t) {
                applied += 1;
                ensure(!verify_trace(&bad).is_clean(), || {
                    format!("{name} on scenario {i} not detected")
                })?;
            }
        }
        ensure(applied > 0, || format!("{name} never applicable"))?;
        summary.push(format!("{name} {applied}/{applied}"));
    }
    Ok(format!("detected: {}", summary.join(", ")))
}

fn main() -> ExitCode {
    let traces = corpus_traces();
    let checks: [(&str, &dyn Fn() -> Outcome); 8] = [
        ("AC1", &ac1),
        ("AC2", &|| {
            let started = Instant::now();
            let traces = corpus_traces();
            let r = ac2(&traces);
            r.and_then(|ok| {
                within(Duration::from_secs(60), started)
                    .map(|_| format!("{ok}, in {:?}", started.elapsed()))
            })
        }),
        ("AC3", &|| ac3(&traces)),
        ("AC4", &|| ac4(&traces)),
        ("AC5", &ac5),
        ("AC6", &ac6),
        ("AC7", &ac7),
        ("AC8", &|| ac8(&traces)),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let started = Instant::now();
        match check() {
            Ok(msg) => println!("{name} PASS ({:.2?}) {msg}", started.elapsed()),
            Err(msg) => {
                failed += 1;
                println!("{name} FAIL ({:.2?}) {msg}", started.elapsed());
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
