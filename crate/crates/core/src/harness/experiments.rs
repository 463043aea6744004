//! Canned experiments: the scenarios behind the CLI subcommands and the
//! acceptance checks, plus the helpers that judge their outcome.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clock::{Delay, Micros};
use crate::model::{
    mangle_namespace, Change, Kind, NewObject, ObjectKey, PodSpec, ServiceSpec, Spec, TenantId,
};
use crate::syncer::{AuditEntry, OWNER_ANNOTATION};

use super::engine::{RunError, SimEngine};
use super::report::Report;
use super::run;
use super::scenario::{ClockMode, LoadPattern, Scenario, TenantGroup};
use super::world::{World, TENANT_NAMESPACE};

/// Regular tenants must stay under this average with fair queuing on.
pub const REGULAR_BOUND_US: Micros = 2_000_000;

// ---------------------------------------------------------------------------
// Fairness

/// Ten greedy tenants bursting 900 pods each next to forty regular tenants
/// creating ten pods one after another.
pub fn fairness_scenario(seed: u64, fair_queuing: bool) -> Scenario {
    let group = |name: &str, count, pattern, pods| TenantGroup {
        name: name.into(),
        count,
        pattern,
        pods,
        weight: 1,
    };
    Scenario {
        name: format!("fairness-{}", if fair_queuing { "fq" } else { "fifo" }),
        groups: vec![
            group("greedy", 10, LoadPattern::Burst, 900),
            group("regular", 40, LoadPattern::Sequential, 10),
        ],
        fair_queuing,
        seed,
        ..Scenario::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessVerdict {
    pub regular_max_on_us: f64,
    pub greedy_min_on_us: f64,
    /// Regular tenants whose FIFO average is over twice their fair average.
    pub regular_delayed_off: usize,
    pub regular_tenants: usize,
}

impl FairnessVerdict {
    pub fn regular_bounded(&self) -> bool {
        self.regular_max_on_us <= REGULAR_BOUND_US as f64
    }

    pub fn greedy_slower(&self) -> bool {
        self.greedy_min_on_us > self.regular_max_on_us
    }

    pub fn delayed_share(&self) -> f64 {
        self.regular_delayed_off as f64 / self.regular_tenants.max(1) as f64
    }
}

pub struct Fairness {
    pub fq_on: Report,
    pub fq_off: Report,
}

impl Fairness {
    pub fn verdict(&self) -> FairnessVerdict {
        let means = |r: &Report, group: &str| -> BTreeMap<String, f64> {
            r.tenants
                .iter()
                .filter(|t| t.group == group)
                .map(|t| (t.tenant.clone(), t.mean_us))
                .collect()
        };
        let (reg_on, reg_off) = (
            means(&self.fq_on, "regular"),
            means(&self.fq_off, "regular"),
        );
        let greedy_on = means(&self.fq_on, "greedy");
        FairnessVerdict {
            regular_max_on_us: reg_on.values().copied().fold(0.0, f64::max),
            greedy_min_on_us: greedy_on.values().copied().fold(f64::INFINITY, f64::min),
            regular_delayed_off: reg_on
                .iter()
                .filter(|(t, on)| reg_off.get(*t).is_some_and(|off| *off > 2.0 * **on))
                .count(),
            regular_tenants: reg_on.len(),
        }
    }
}

/// Runs the fairness scenario with fair queuing on and off, same seed.
pub fn fairness(seed: u64) -> Result<Fairness, RunError> {
    Ok(Fairness {
        fq_on: run(fairness_scenario(seed, true))?,
        fq_off: run(fairness_scenario(seed, false))?,
    })
}

// ---------------------------------------------------------------------------
// Breakdown and sweep

/// 100 tenants bursting 100 pods each.
pub fn breakdown_scenario(seed: u64, downward_workers: usize) -> Scenario {
    Scenario {
        name: format!("breakdown-dws{downward_workers}"),
        downward_workers,
        seed,
        ..Scenario::uniform(100, 100, LoadPattern::Burst)
    }
}

pub fn breakdown(seed: u64, downward_workers: usize) -> Result<Report, RunError> {
    run(breakdown_scenario(seed, downward_workers))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Syncer,
    Baseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub pods: usize,
    pub tenants: usize,
    pub mode: Mode,
    pub throughput_pods_per_s: f64,
    pub scheduler_throughput: f64,
    pub latency_mean_us: f64,
    pub latency_p99_us: Micros,
    pub makespan_us: Micros,
}

pub fn sweep_scenario(
    pods: usize,
    tenants: usize,
    mode: Mode,
    seed: u64,
    clock: ClockMode,
) -> Scenario {
    let tag = match mode {
        Mode::Syncer => "vc",
        Mode::Baseline => "base",
    };
    Scenario {
        name: format!("sweep-{tag}-{pods}x{tenants}"),
        baseline_mode: mode == Mode::Baseline,
        seed,
        clock,
        ..Scenario::spread(tenants, pods, LoadPattern::Burst)
    }
}

/// One syncer run and one baseline run per (pods, tenants) cell.
pub fn sweep(
    pods: &[usize],
    tenants: &[usize],
    seed: u64,
    clock: ClockMode,
) -> Result<Vec<SweepRow>, RunError> {
    let mut rows = Vec::new();
    for &p in pods {
        for &t in tenants {
            for mode in [Mode::Syncer, Mode::Baseline] {
                let r = run(sweep_scenario(p, t, mode, seed, clock))?;
                rows.push(SweepRow {
                    pods: p,
                    tenants: t,
                    mode,
                    throughput_pods_per_s: r.summary.throughput_pods_per_s,
                    scheduler_throughput: r.summary.scheduler_throughput,
                    latency_mean_us: r.summary.latency_mean_us,
                    latency_p99_us: r.summary.latency_p99_us,
                    makespan_us: r.summary.makespan_us,
                });
            }
        }
    }
    Ok(rows)
}

/// (max - min) / max of the syncer-mode throughputs at one pod count.
pub fn throughput_spread(rows: &[SweepRow], pods: usize) -> f64 {
    let v: Vec<f64> = rows
        .iter()
        .filter(|r| r.pods == pods && r.mode == Mode::Syncer)
        .map(|r| r.throughput_pods_per_s)
        .collect();
    let max = v.iter().copied().fold(0.0, f64::max);
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    if v.is_empty() || max == 0.0 {
        return 0.0;
    }
    (max - min) / max
}

// ---------------------------------------------------------------------------
// Routing injection

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandboxRow {
    pub pod: String,
    pub rules: usize,
    /// Duration of the first rule sync covering the pod's admission.
    pub injection_us: Micros,
    pub gate_passed_at: Micros,
    pub running_at: Micros,
    /// Rules were in place when the gate opened and the pod ran after it.
    pub gated: bool,
    pub lookups_ok: usize,
}

pub struct Routing {
    pub report: Report,
    pub services: usize,
    pub sandboxes: Vec<SandboxRow>,
}

impl Routing {
    pub fn injection_times(&self) -> Vec<Micros> {
        self.sandboxes.iter().map(|s| s.injection_us).collect()
    }
}

pub fn routing_scenario(seed: u64, services: usize) -> Scenario {
    Scenario {
        name: "routing".into(),
        services_per_tenant: services,
        rule_latency: Delay::Fixed(10_000),
        seed,
        ..Scenario::uniform(2, 5, LoadPattern::Burst)
    }
}

/// Pods start in tenants that already have `services` services; checks each
/// sandbox's rule injection, gate ordering and lookups.
pub fn routing(seed: u64, services: usize) -> Result<Routing, RunError> {
    let mut engine = SimEngine::new(routing_scenario(seed, services))?;
    engine.start()?;
    let report = engine.run_to_completion()?;
    let w = &engine.world;
    let router = &w.cluster.router;
    let starts = w.cluster.agents.starts();
    let index: BTreeMap<TenantId, usize> = w
        .tenants
        .iter()
        .enumerate()
        .map(|(i, t)| (t.record.tenant_id.clone(), i))
        .collect();
    let (pods, _) = w.super_store.list(Kind::Pod, None);
    let mut sandboxes = Vec::new();
    for pod in pods {
        let Ok((tenant, _)) = w.registry.demangle_namespace(&pod.key.namespace) else {
            continue;
        };
        let admitted = pod.pod_spec().map_or(0, |p| p.service_epoch_at_admission);
        let covering = router
            .sync_history(&pod.key)
            .into_iter()
            .find(|r| r.generation >= admitted);
        let start = starts.get(&pod.key);
        let ti = index[&tenant];
        let lookups_ok = (0..services)
            .filter(|&j| {
                let ip = format!("10.{}.{}.{}", ti / 250, ti % 250, j + 1);
                router.route_lookup(&pod.key, &ip, 80).ok()
                    == Some(format!("172.16.{ti}.{}", j + 1))
            })
            .count();
        let (gate, running) = start.map_or((0, 0), |s| (s.gate_passed_at, s.running_at));
        sandboxes.push(SandboxRow {
            pod: pod.key.full_name(),
            rules: covering.as_ref().map_or(0, |r| r.rules),
            injection_us: covering.as_ref().map_or(0, |r| r.finished - r.started),
            gate_passed_at: gate,
            running_at: running,
            gated: start.is_some()
                && covering.as_ref().is_some_and(|r| r.finished <= gate)
                && gate <= running,
            lookups_ok,
        });
    }
    Ok(Routing {
        report,
        services,
        sandboxes,
    })
}

// ---------------------------------------------------------------------------
// Convergence under faults

#[derive(Debug, Clone)]
pub struct ConvergenceConfig {
    pub tenants: usize,
    pub objects: usize,
    pub drop_probability: f64,
    pub rounds: usize,
    pub round_interval: Micros,
    pub touches_per_round: usize,
    pub seed: u64,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            tenants: 5,
            objects: 200,
            drop_probability: 0.2,
            rounds: 20,
            round_interval: 250_000,
            touches_per_round: 20,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub notifications_dropped: u64,
    pub relists: u64,
    /// Mismatches found by the first scan after the churn stopped.
    pub first_scan_mismatches: usize,
    /// Differences left after quiescence plus one scan interval.
    pub residual: Vec<String>,
    pub second_scan_mismatches: usize,
    pub churn_ended_at: Micros,
}

const CHURN_KINDS: [Kind; 4] = [Kind::ConfigMap, Kind::Secret, Kind::Service, Kind::Pod];

fn churn_object(ti: usize, i: usize, rev: usize) -> NewObject {
    let kind = CHURN_KINDS[i % CHURN_KINDS.len()];
    let key = ObjectKey::namespaced(kind, TENANT_NAMESPACE, &format!("obj-{i:03}"));
    let spec = match kind {
        Kind::Service => Spec::Service(ServiceSpec {
            cluster_ip: format!("10.200.{ti}.{}", i % 250),
            ports: vec![80 + (rev % 3) as u16],
        }),
        Kind::Pod => Spec::Pod(PodSpec {
            containers: vec![format!("app-v{rev}")],
            ..PodSpec::default()
        }),
        _ => Spec::Data(BTreeMap::from([("rev".to_string(), rev.to_string())])),
    };
    NewObject::new(key, spec).with_label("rev", rev.to_string())
}

fn touch(obj: &NewObject, rev: usize) -> Change {
    let labels = BTreeMap::from([("rev".to_string(), rev.to_string())]);
    let spec = match &obj.spec {
        Spec::Pod(_) => None,
        _ => Some(obj.spec.clone()),
    };
    Change {
        spec,
        labels: Some(labels),
        ..Change::default()
    }
}

/// Churns tenants' objects while notifications are dropped, events delayed
/// and watches broken, then lets the periodic scan repair what was missed.
pub fn convergence(cfg: &ConvergenceConfig) -> Result<Convergence, RunError> {
    let scenario = Scenario {
        name: "convergence".into(),
        drop_probability: cfg.drop_probability,
        informer_lag: Delay::Uniform {
            min: 1_000,
            max: 200_000,
        },
        tenant_rate_limit: false,
        seed: cfg.seed,
        ..Scenario::uniform(cfg.tenants, 1, LoadPattern::Burst)
    };
    let scan_interval = scenario.scan_interval;
    let mut engine = SimEngine::new(scenario)?;
    engine.start()?;
    engine.run_until(engine.world.scenario.warmup);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xc0de);
    let stores: Vec<_> = engine
        .world
        .tenants
        .iter()
        .map(|t| t.record.store.clone())
        .collect();
    let mut live: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); stores.len()];
    for (ti, store) in stores.iter().enumerate() {
        for i in 0..cfg.objects {
            if store.create(churn_object(ti, i, 0)).is_ok() {
                live[ti].insert(i);
            }
        }
    }

    let super_store = engine.world.super_store.clone();
    for round in 1..=cfg.rounds {
        let t = engine.now() + cfg.round_interval;
        engine.run_until(t);
        for (ti, store) in stores.iter().enumerate() {
            let mut picks: Vec<usize> = (0..cfg.objects).collect();
            picks.shuffle(&mut rng);
            for &i in picks.iter().take(cfg.touches_per_round) {
                let obj = churn_object(ti, i, round);
                let exists = live[ti].contains(&i);
                match (rng.gen_range(0..3), exists) {
                    (0, true) => {
                        let _ = store.update(&obj.key, None, touch(&obj, round));
                    }
                    (1, true) => {
                        if store.delete(&obj.key).is_ok() {
                            live[ti].remove(&i);
                        }
                    }
                    (_, true) => {
                        // Same name, new uid.
                        let _ = store.delete(&obj.key);
                        live[ti].remove(&i);
                        if store.create(obj).is_ok() {
                            live[ti].insert(i);
                        }
                    }
                    (_, false) => {
                        if store.create(obj).is_ok() {
                            live[ti].insert(i);
                        }
                    }
                }
            }
        }
        match round % 5 {
            1 => {
                super_store.cancel_watchers();
                stores.iter().for_each(|s| s.cancel_watchers());
            }
            3 => {
                let s = &stores[round % stores.len()];
                for kind in [Kind::Pod, Kind::ConfigMap] {
                    s.compact_history(kind);
                    super_store.compact_history(kind);
                }
                s.cancel_watchers();
                super_store.cancel_watchers();
            }
            _ => {}
        }
    }
    let churn_ended_at = engine.now();
    // Faults stop with the churn; from here on only the scan can repair
    // what was lost.
    for inf in engine.world.syncer.informers() {
        inf.set_drop_probability(0.0);
    }

    // Quiesce, then give the periodic scan one full interval to run and its
    // repairs a few seconds to land.
    engine.run_until(churn_ended_at + scan_interval + 5_000_000);
    let w = &engine.world;
    let first_scan_mismatches = w
        .syncer
        .audit()
        .entries()
        .into_iter()
        .filter_map(|e| match e {
            AuditEntry::Scan { at, mismatches, .. } if at >= churn_ended_at => {
                Some((at, mismatches))
            }
            _ => None,
        })
        .fold(BTreeMap::<Micros, usize>::new(), |mut m, (at, n)| {
            *m.entry(at).or_default() += n;
            m
        })
        .into_values()
        .next()
        .unwrap_or(0);
    let residual = projection_diff(w);
    let second_scan_mismatches = w.syncer.scan_all();
    let (mut dropped, mut relists) = (0, 0);
    for inf in w.syncer.informers() {
        let s = inf.stats();
        dropped += s.dropped;
        relists += s.relists;
    }
    Ok(Convergence {
        notifications_dropped: dropped,
        relists,
        first_scan_mismatches,
        residual,
        second_scan_mismatches,
        churn_ended_at,
    })
}

/// Every difference between tenant objects and their super-cluster mirrors:
/// missing or orphaned mirrors, tenant-owned fields that differ, Pod status
/// or binding not copied back, and virtual nodes that do not match bindings.
pub fn projection_diff(world: &World) -> Vec<String> {
    let sup = &world.super_store;
    let mut out = Vec::new();
    for t in &world.tenants {
        let rec = &t.record;
        let id = rec.tenant_id.as_str();
        let mut bound_nodes = BTreeSet::new();
        for kind in Kind::DOWNWARD {
            let (tenant_objs, _) = rec.store.list(kind, None);
            let mut expected = BTreeSet::new();
            for o in &tenant_objs {
                let scope = if kind.is_cluster_scoped() {
                    &o.key.name
                } else {
                    &o.key.namespace
                };
                let Ok(mangled) = mangle_namespace(rec, scope) else {
                    out.push(format!("{id}: unmappable {}", o.key));
                    continue;
                };
                let skey = if kind.is_cluster_scoped() {
                    ObjectKey::cluster(kind, &mangled)
                } else {
                    ObjectKey::namespaced(kind, &mangled, &o.key.name)
                };
                expected.insert(skey.clone());
                let Ok(s) = sup.get(&skey) else {
                    out.push(format!("{id}: missing mirror of {}", o.key));
                    continue;
                };
                if s.spec.tenant_projection() != o.spec.tenant_projection() || s.labels != o.labels
                {
                    out.push(format!("{id}: spec differs for {}", o.key));
                }
                if kind == Kind::Pod {
                    let node = |v: &crate::model::VersionedObject| {
                        v.pod_spec()
                            .map(|p| p.node_name.clone())
                            .unwrap_or_default()
                    };
                    if node(o) != node(&s) || o.status != s.status {
                        out.push(format!("{id}: status differs for {}", o.key));
                    }
                    if !node(o).is_empty() {
                        bound_nodes.insert(node(o));
                    }
                }
            }
            let (supers, _) = sup.list(kind, None);
            for s in supers {
                let owned = s.annotations.get(OWNER_ANNOTATION).map(String::as_str) == Some(id);
                if owned && !expected.contains(&s.key) {
                    out.push(format!("{id}: orphaned {}", s.key));
                }
            }
        }
        let (vnodes, _) = rec.store.list(Kind::Node, None);
        let vnodes: BTreeSet<String> = vnodes.into_iter().map(|n| n.key.name).collect();
        if vnodes != bound_nodes {
            out.push(format!(
                "{id}: vnodes {vnodes:?} != bound nodes {bound_nodes:?}"
            ));
        }
    }
    out
}
