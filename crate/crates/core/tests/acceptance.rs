//! Acceptance run: every criterion at its stated tolerance, one line each.
//! Runs as a plain binary so the lines come out in order and unfiltered.

#[path = "common/queue_model.rs"]
mod queue_model;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vcsim_core::clock::Delay;
use vcsim_core::harness::experiments::{
    breakdown, breakdown_scenario, convergence, fairness, fairness_scenario, projection_diff,
    routing, routing_scenario, sweep, throughput_spread, ConvergenceConfig, Mode, REGULAR_BOUND_US,
};
use vcsim_core::harness::{
    run, ClockMode, LoadPattern, Phase, Scenario, SimEngine, TenantGroup, World, TENANT_NAMESPACE,
};
use vcsim_core::model::{Kind, LabelSelector, NewObject, ObjectKey, PodSpec, Spec};
use vcsim_core::syncer::OWNER_ANNOTATION;
use vcsim_core::workqueue::Policy;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

const SEED: u64 = 1;

fn ac1_fairness() -> Outcome {
    let started = Instant::now();
    let f = fairness(SEED).map_err(err)?;
    let wall = started.elapsed();
    let v = f.verdict();
    let detail = format!(
        "FQ on: max regular mean {:.3}s (bound {:.1}s), min greedy mean {:.3}s; FQ off: {}/{} regular tenants over 2x ({:.0}%); {:.1}s wall",
        v.regular_max_on_us / 1e6,
        REGULAR_BOUND_US as f64 / 1e6,
        v.greedy_min_on_us / 1e6,
        v.regular_delayed_off,
        v.regular_tenants,
        100.0 * v.delayed_share(),
        wall.as_secs_f64()
    );
    ensure(
        v.regular_bounded()
            && v.greedy_slower()
            && v.delayed_share() >= 0.25
            && wall < Duration::from_secs(60),
        detail,
    )
}

fn ac2_breakdown() -> Outcome {
    let started = Instant::now();
    let r = breakdown(SEED, 20).map_err(err)?;
    let wall = started.elapsed();
    let dws = r.phase(Phase::DwsProcess).mean_us;
    let uws = r.phase(Phase::UwsProcess).mean_us;
    let share = r.summary.queue_share;
    ensure(
        share >= 0.5 && dws <= 10_000.0 && uws <= 10_000.0 && wall < Duration::from_secs(60),
        format!(
            "queue share {:.1}% of {:.3}s mean; DWS-Process {:.2}ms, UWS-Process {:.2}ms; {:.1}s wall",
            100.0 * share,
            r.summary.latency_mean_us / 1e6,
            dws / 1e3,
            uws / 1e3,
            wall.as_secs_f64()
        ),
    )
}

fn ac3_scheduler_bound() -> Outcome {
    let a = breakdown(SEED, 20).map_err(err)?;
    let b = breakdown(SEED, 80).map_err(err)?;
    let (pa, pb) = (
        a.summary.latency_p99_us as f64,
        b.summary.latency_p99_us as f64,
    );
    let diff = (pa - pb).abs() / pa.min(pb);
    let cap = 1e6 / breakdown_scenario(SEED, 20).scheduler_service_time as f64;
    let worst = [
        a.summary.scheduler_throughput,
        b.summary.scheduler_throughput,
    ]
    .into_iter()
    .map(|t| (t - cap).abs() / cap)
    .fold(0.0, f64::max);
    ensure(
        diff < 0.10 && worst <= 0.05,
        format!(
            "p99 {:.3}s (20 workers) vs {:.3}s (80 workers), {:.2}% apart; scheduler {:.1} and {:.1} pods/s vs cap {cap:.0}",
            pa / 1e6,
            pb / 1e6,
            100.0 * diff,
            a.summary.scheduler_throughput,
            b.summary.scheduler_throughput
        ),
    )
}

fn ac4_throughput() -> Outcome {
    const SIM_PODS: usize = 10_000;
    let rows = sweep(&[SIM_PODS], &[25, 50, 100], SEED, ClockMode::Simulated).map_err(err)?;
    let spread = throughput_spread(&rows, SIM_PODS);
    let sim: Vec<String> = rows
        .iter()
        .filter(|r| r.mode == Mode::Syncer)
        .map(|r| format!("{}t {:.1}", r.tenants, r.throughput_pods_per_s))
        .collect();

    const RT_PODS: usize = 2_000;
    let rt = sweep(&[RT_PODS], &[25], SEED, ClockMode::Realtime).map_err(err)?;
    let rate = |m| {
        rt.iter()
            .find(|r| r.mode == m)
            .map_or(0.0, |r| r.throughput_pods_per_s)
    };
    let (vc, base) = (rate(Mode::Syncer), rate(Mode::Baseline));
    let ratio = vc / base;
    ensure(
        spread <= 0.10 && ratio >= 0.60,
        format!(
            "simulated {SIM_PODS} pods: [{}] pods/s, spread {:.2}%; realtime {RT_PODS} pods: syncer {vc:.1} vs baseline {base:.1} pods/s ({:.0}%)",
            sim.join(", "),
            100.0 * spread,
            100.0 * ratio
        ),
    )
}

fn ac5_wrr() -> Outcome {
    let started = Instant::now();
    let counts = queue_model::saturated_counts(&[1, 2, 4], 7000, 7000);
    let mut runner = TestRunner::new(Config {
        cases: 64,
        failure_persistence: None,
        ..Config::default()
    });
    let prop = runner.run(
        &(prop::collection::vec(1u32..=8, 1..6), 1usize..40),
        |(weights, cycles)| {
            let n = cycles * weights.iter().sum::<u32>() as usize;
            let per = (cycles as u32 * weights.iter().max().unwrap()) as u16;
            let got = queue_model::saturated_counts(&weights, per, n);
            let want: Vec<u64> = weights
                .iter()
                .map(|&w| cycles as u64 * u64::from(w))
                .collect();
            prop_assert_eq!(got, want);
            Ok(())
        },
    );
    let wall = started.elapsed();
    ensure(
        counts == [1000, 2000, 4000] && prop.is_ok() && wall < Duration::from_secs(5),
        format!(
            "counts {counts:?}; 64 random weight vectors {}; {:.2}s",
            if prop.is_ok() {
                "proportional"
            } else {
                "NOT proportional"
            },
            wall.as_secs_f64()
        ),
    )
}

fn ac6_queue_safety() -> Outcome {
    use queue_model::Op;
    const OPS: usize = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(0xacc6);
    let mut ops = |tenants: usize| -> Vec<Op> {
        (0..OPS)
            .map(|_| match rng.gen_range(0..11) {
                0..=3 => Op::Enqueue(rng.gen_range(0..tenants), rng.gen_range(0..64)),
                4..=6 => Op::Dequeue,
                7..=9 => Op::Done(rng.gen()),
                _ => Op::StrayDone(rng.gen_range(0..tenants), rng.gen_range(0..64)),
            })
            .collect()
    };
    let wrr = queue_model::run_ops(Policy::WeightedRoundRobin, &[1, 2, 4], &ops(3));
    let fifo = queue_model::run_ops(Policy::Fifo, &[1, 1, 1, 1], &ops(4));
    ensure(
        wrr.is_ok() && fifo.is_ok(),
        format!(
            "{OPS} ops WRR: {wrr:?}; {OPS} ops FIFO: {fifo:?}; invariants checked after every op"
        ),
    )
}

fn ac7_convergence() -> Outcome {
    let cfg = ConvergenceConfig::default();
    let c = convergence(&cfg).map_err(err)?;
    let residual = c.residual.len();
    ensure(
        residual == 0 && c.second_scan_mismatches == 0 && c.notifications_dropped > 0 && c.relists > 0,
        format!(
            "{} tenants x {} objects: {} notifications dropped, {} relists, first scan requeued {}; residual diffs {residual}{}; second scan {}",
            cfg.tenants,
            cfg.objects,
            c.notifications_dropped,
            c.relists,
            c.first_scan_mismatches,
            c.residual.first().map(|d| format!(" (e.g. {d})")).unwrap_or_default(),
            c.second_scan_mismatches
        ),
    )
}

/// Keys in the super cluster's commit log that fall outside every tenant
/// prefix. Physical nodes belong to the cluster itself.
fn unprefixed_super_commits(world: &World) -> Vec<String> {
    let prefixes: Vec<String> = world
        .tenants
        .iter()
        .map(|t| t.record.prefix.clone())
        .collect();
    world
        .super_store
        .commit_log()
        .into_iter()
        .filter(|c| c.key.kind != Kind::Node)
        .filter(|c| {
            let scope = if c.key.kind.is_cluster_scoped() {
                &c.key.name
            } else {
                &c.key.namespace
            };
            !prefixes.iter().any(|p| scope.starts_with(p.as_str()))
        })
        .map(|c| c.key.to_string())
        .collect()
}

/// Owned super objects whose scope is not their owner's prefix.
fn misowned_super_objects(world: &World) -> Vec<String> {
    let prefix: BTreeMap<&str, &str> = world
        .tenants
        .iter()
        .map(|t| (t.record.tenant_id.as_str(), t.record.prefix.as_str()))
        .collect();
    Kind::DOWNWARD
        .iter()
        .flat_map(|&k| world.super_store.list(k, None).0)
        .filter_map(|o| {
            let owner = o.annotations.get(OWNER_ANNOTATION)?;
            let scope = if o.key.kind.is_cluster_scoped() {
                &o.key.name
            } else {
                &o.key.namespace
            };
            let ok = prefix
                .get(owner.as_str())
                .is_some_and(|p| scope.starts_with(p));
            (!ok).then(|| o.key.to_string())
        })
        .collect()
}

fn ac8_isolation() -> Outcome {
    let mut notes = Vec::new();
    let mut bad = 0usize;
    let scenarios = [
        Scenario {
            name: "isolation-mixed".into(),
            groups: vec![
                TenantGroup {
                    name: "burst".into(),
                    count: 6,
                    pattern: LoadPattern::Burst,
                    pods: 60,
                    weight: 2,
                },
                TenantGroup {
                    name: "seq".into(),
                    count: 10,
                    pattern: LoadPattern::Sequential,
                    pods: 6,
                    weight: 1,
                },
            ],
            drop_probability: 0.05,
            informer_lag: Delay::Uniform {
                min: 100,
                max: 20_000,
            },
            ..Scenario::default()
        },
        routing_scenario(SEED, 10),
    ];
    for s in scenarios {
        let name = s.name.clone();
        let mut e = SimEngine::new(s).map_err(err)?;
        e.start().map_err(err)?;
        e.run_to_completion().map_err(err)?;
        // Tear one tenant down as well, then let the collection finish.
        let gone = e.world.tenants[0].record.tenant_id.clone();
        e.world.syncer.unregister_tenant(&gone).map_err(err)?;
        let t = e.now() + 2_000_000;
        e.run_until(t);
        let audit = e.world.syncer.audit().summary();
        let unprefixed = unprefixed_super_commits(&e.world);
        let misowned = misowned_super_objects(&e.world);
        bad += audit.violations as usize + unprefixed.len() + misowned.len();
        notes.push(format!(
            "{name}: {} audited writes, {} violations, {} unprefixed commits, {} misowned objects",
            audit.writes,
            audit.violations,
            unprefixed.len(),
            misowned.len()
        ));
    }
    let c = convergence(&ConvergenceConfig::default()).map_err(err)?;
    notes.push(format!("convergence churn: residual {}", c.residual.len()));
    ensure(bad == 0, notes.join("; "))
}

fn anti_affine_pod(name: &str, group: &str) -> NewObject {
    let spec = PodSpec {
        containers: vec!["app".into()],
        anti_affinity: Some(BTreeSet::from([LabelSelector::new("pair", group)])),
        ..PodSpec::default()
    };
    NewObject::pod(TENANT_NAMESPACE, name, spec).with_label("pair", group)
}

fn ac9_vnodes() -> Outcome {
    const TENANTS: usize = 4;
    const PAIRS: usize = 12;
    let s = Scenario {
        nodes: 6,
        tenant_rate_limit: false,
        ..Scenario::uniform(TENANTS, 1, LoadPattern::Burst)
    };
    let mut e = SimEngine::new(s).map_err(err)?;
    e.start().map_err(err)?;
    for t in &e.world.tenants {
        for p in 0..PAIRS {
            for side in ["a", "b"] {
                let group = format!("g{p}");
                t.record
                    .store
                    .create(anti_affine_pod(&format!("{group}-{side}"), &group))
                    .map_err(err)?;
            }
        }
    }
    let t = e.now() + 5_000_000;
    e.run_until(t);
    // Drop a third of the pairs so some nodes empty out for some tenants.
    for t in &e.world.tenants {
        for p in (0..PAIRS).step_by(3) {
            for side in ["a", "b"] {
                let key =
                    ObjectKey::namespaced(Kind::Pod, TENANT_NAMESPACE, &format!("g{p}-{side}"));
                t.record.store.delete(&key).map_err(err)?;
            }
        }
    }
    let t = e.now() + 5_000_000;
    e.run_until(t);

    let physical: BTreeSet<String> = e
        .world
        .super_store
        .list(Kind::Node, None)
        .0
        .into_iter()
        .map(|n| n.key.name)
        .collect();
    let (mut pairs, mut split, mut problems) = (0, 0, Vec::new());
    for t in &e.world.tenants {
        let id = &t.record.tenant_id;
        let pods = t.record.store.list(Kind::Pod, None).0;
        let node_of: BTreeMap<String, String> = pods
            .iter()
            .filter_map(|p| {
                let n = &p.pod_spec()?.node_name;
                (!n.is_empty()).then(|| (p.key.name.clone(), n.clone()))
            })
            .collect();
        if node_of.len() != pods.len() {
            problems.push(format!(
                "{id}: {} of {} pods unbound",
                pods.len() - node_of.len(),
                pods.len()
            ));
        }
        for p in (0..PAIRS).filter(|p| p % 3 != 0) {
            pairs += 1;
            let (a, b) = (
                node_of.get(&format!("g{p}-a")),
                node_of.get(&format!("g{p}-b")),
            );
            if a.is_some() && a != b {
                split += 1;
            } else {
                problems.push(format!("{id}: pair g{p} on {a:?}/{b:?}"));
            }
        }
        let used: BTreeSet<&String> = node_of.values().collect();
        let vnodes = t.record.store.list(Kind::Node, None).0;
        let mut mirrored = BTreeSet::new();
        for v in &vnodes {
            match &v.spec {
                Spec::Node(n) if n.mirrors == v.key.name && physical.contains(&n.mirrors) => {
                    if !mirrored.insert(n.mirrors.clone()) {
                        problems.push(format!("{id}: two vnodes for {}", n.mirrors));
                    }
                }
                other => problems.push(format!("{id}: vnode {} mirrors {other:?}", v.key.name)),
            }
        }
        let vset: BTreeSet<&String> = mirrored.iter().collect();
        if vset != used {
            problems.push(format!("{id}: vnodes {vset:?} but pods on {used:?}"));
        }
    }
    let diff = projection_diff(&e.world);
    ensure(
        problems.is_empty() && diff.is_empty() && pairs > 0,
        format!(
            "{split}/{pairs} anti-affine pairs on distinct vnodes; vnode set equals bound-node set for {TENANTS} tenants; {} issues{}",
            problems.len() + diff.len(),
            problems.iter().chain(&diff).next().map(|p| format!(" (e.g. {p})")).unwrap_or_default()
        ),
    )
}

fn ac10_routing() -> Outcome {
    const SERVICES: usize = 100;
    let r = routing(SEED, SERVICES).map_err(err)?;
    let times = r.injection_times();
    let lo = times.iter().min().copied().unwrap_or(0);
    let hi = times.iter().max().copied().unwrap_or(0);
    let within = times.iter().all(|&t| (950_000..=1_050_000).contains(&t));
    let gated = r.sandboxes.iter().filter(|s| s.gated).count();
    let lookups = r
        .sandboxes
        .iter()
        .filter(|s| s.lookups_ok == SERVICES)
        .count();
    let n = r.sandboxes.len();
    ensure(
        n > 0 && within && gated == n && lookups == n,
        format!(
            "{n} sandboxes: injection {:.3}s..{:.3}s (target 1.000s +/- 5%); {gated}/{n} gated before Running; {lookups}/{n} resolve all {SERVICES} services",
            lo as f64 / 1e6,
            hi as f64 / 1e6
        ),
    )
}

fn ac11_names() -> Outcome {
    const PAIRS: usize = 10_000;
    let r = names::check(11, 200, PAIRS);
    ensure(r.is_ok(), format!("{PAIRS} pairs over 200 tenants: {r:?}"))
}

fn ac12_determinism() -> Outcome {
    let scenarios = [
        Scenario {
            name: "determinism-faults".into(),
            seed: 42,
            drop_probability: 0.1,
            informer_lag: Delay::Uniform {
                min: 100,
                max: 50_000,
            },
            reconcile_latency: Delay::Uniform {
                min: 500,
                max: 3_000,
            },
            ..Scenario::uniform(8, 30, LoadPattern::Burst)
        },
        fairness_scenario(7, true),
        routing_scenario(3, 20),
    ];
    let mut notes = Vec::new();
    let mut ok = true;
    for s in scenarios {
        let name = s.name.clone();
        let a = run(s.clone()).map_err(err)?.to_json().map_err(err)?;
        let b = run(s).map_err(err)?.to_json().map_err(err)?;
        ok &= a == b;
        notes.push(format!(
            "{name}: {} bytes {}",
            a.len(),
            if a == b { "identical" } else { "DIFFER" }
        ));
    }
    ensure(ok, notes.join("; "))
}

fn main() {
    let criteria: [Criterion; 12] = [
        ("AC1 fairness", ac1_fairness),
        ("AC2 queue dominance", ac2_breakdown),
        ("AC3 scheduler bottleneck", ac3_scheduler_bound),
        ("AC4 throughput invariance", ac4_throughput),
        ("AC5 WRR proportionality", ac5_wrr),
        ("AC6 dedup and lifecycle", ac6_queue_safety),
        ("AC7 convergence under faults", ac7_convergence),
        ("AC8 isolation", ac8_isolation),
        ("AC9 vnode semantics", ac9_vnodes),
        ("AC10 routing injection", ac10_routing),
        ("AC11 name mapping", ac11_names),
        ("AC12 determinism", ac12_determinism),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (name, f) in criteria {
        if !filter.is_empty()
            && !filter
                .iter()
                .any(|x| name.to_lowercase().contains(&x.to_lowercase()))
        {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(d) => println!("PASS {name}: {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL {name}: {d}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
