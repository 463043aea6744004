//! Wiring of one experiment: super cluster, syncer, tenant stores, load
//! generator and tracer, independent of which clock drives them.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Weak};

use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::clock::{Clock, Micros};
use crate::informer::InformerConfig;
use crate::model::{
    EndpointsSpec, Kind, NewObject, ObjectKey, PodSpec, ServiceSpec, Spec, TenantId, TenantRecord,
    TenantRegistry, Uid, VersionedObject,
};
use crate::store::{EventType, ObjectStore, StoreConfig, StoreError};
use crate::supersim::{GroupFn, SchedulerConfig, SuperCluster, SuperSimConfig};
use crate::syncer::{ReconcileReport, SyncError, Syncer, SyncerConfig};
use crate::timer::Timer;
use crate::workqueue::Policy;

use super::report::{DepthSample, Report, RunStats};
use super::scenario::{LoadPattern, Scenario};
use super::trace::Tracer;

/// Namespace every tenant creates its pods and services in.
pub const TENANT_NAMESPACE: &str = "default";

pub struct TenantHandle {
    pub record: TenantRecord,
    pub pattern: LoadPattern,
    pub pods: usize,
}

pub struct World {
    pub scenario: Scenario,
    pub clock: Arc<dyn Clock>,
    pub timer: Arc<dyn Timer>,
    pub registry: Arc<TenantRegistry>,
    pub super_store: Arc<ObjectStore>,
    pub cluster: SuperCluster,
    pub syncer: Arc<Syncer>,
    pub tenants: Vec<TenantHandle>,
    pub tracer: Arc<Tracer>,
    pub load: Arc<LoadGen>,
    samples: Arc<Mutex<Vec<DepthSample>>>,
    sampling: Arc<AtomicBool>,
}

impl World {
    pub fn build(
        scenario: Scenario,
        clock: Arc<dyn Clock>,
        timer: Arc<dyn Timer>,
    ) -> Result<Self, SyncError> {
        let seed = scenario.seed;
        let registry = Arc::new(TenantRegistry::new());
        let super_store = Arc::new(ObjectStore::new(
            "super",
            clock.clone(),
            StoreConfig {
                uid_seed: seed,
                ..StoreConfig::default()
            },
        ));
        let reg = registry.clone();
        let group_of: GroupFn = Arc::new(move |ns: &str| match reg.demangle_namespace(ns) {
            Ok((tenant, _)) => tenant.to_string(),
            Err(_) => ns.to_string(),
        });
        let informer = |salt: u64| InformerConfig {
            lag: scenario.informer_lag,
            drop_probability: 0.0,
            seed: seed ^ salt,
        };
        let cluster = SuperCluster::new(
            super_store.clone(),
            timer.clone(),
            SuperSimConfig {
                nodes: scenario.nodes,
                node_capacity: scenario.node_capacity,
                scheduler: SchedulerConfig {
                    service_time: scenario.scheduler_service_time,
                    ..SchedulerConfig::default()
                },
                kubelet_ready_delay: scenario.kubelet_ready_delay,
                rule_latency: scenario.rule_latency,
                informer: informer(0x51),
                seed,
                ..SuperSimConfig::default()
            },
            group_of,
        );
        let syncer = Syncer::new(
            SyncerConfig {
                downward_workers: scenario.downward_workers,
                upward_workers: scenario.upward_workers,
                policy: if scenario.fair_queuing {
                    Policy::WeightedRoundRobin
                } else {
                    Policy::Fifo
                },
                admission_window: (scenario.admission_window > 0)
                    .then_some(scenario.admission_window),
                reconcile_latency: scenario.reconcile_latency,
                scan_interval: scenario.scan_interval,
                informer: InformerConfig {
                    drop_probability: scenario.drop_probability,
                    ..informer(0x5c)
                },
                seed,
                ..SyncerConfig::default()
            },
            timer.clone(),
            registry.clone(),
            super_store.clone(),
        );

        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7e4a);
        let mut tenants = Vec::new();
        for (i, (id, group)) in scenario.tenants().into_iter().enumerate() {
            let config = StoreConfig {
                uid_seed: seed.wrapping_add(i as u64 + 1),
                ..if scenario.tenant_rate_limit {
                    StoreConfig::tenant(0)
                } else {
                    StoreConfig::default()
                }
            };
            let store = Arc::new(ObjectStore::new(id.clone(), clock.clone(), config));
            let record = TenantRecord::new(
                &id,
                Uid(rng.gen()),
                group.weight,
                format!("cred-{id}").as_bytes(),
                store,
            )?;
            tenants.push(TenantHandle {
                record,
                pattern: group.pattern,
                pods: group.pods,
            });
        }

        let tracer = Arc::new(Tracer::new());
        let load = LoadGen::new(
            &scenario,
            &tenants,
            &super_store,
            tracer.clone(),
            timer.clone(),
        );
        let world = World {
            scenario,
            clock,
            timer,
            registry,
            super_store,
            cluster,
            syncer,
            tenants,
            tracer,
            load,
            samples: Arc::new(Mutex::new(Vec::new())),
            sampling: Arc::new(AtomicBool::new(true)),
        };
        world.setup_objects()?;
        world.wire();
        Ok(world)
    }

    /// Tenant namespaces and services, written before anything watches.
    fn setup_objects(&self) -> Result<(), SyncError> {
        let n = self.scenario.services_per_tenant;
        for (ti, t) in self.tenants.iter().enumerate() {
            let (store, ns) = self.load.target(&t.record.tenant_id);
            let ns_obj = NewObject::namespace(&ns);
            let svc = |j: usize| {
                let name = format!("svc-{j:03}");
                let ip = format!("10.{}.{}.{}", ti / 250, ti % 250, j + 1);
                let service = NewObject::new(
                    ObjectKey::namespaced(Kind::Service, &ns, &name),
                    Spec::Service(ServiceSpec {
                        cluster_ip: ip,
                        ports: vec![80],
                    }),
                );
                let endpoints = NewObject::new(
                    ObjectKey::namespaced(Kind::Endpoints, &ns, &name),
                    Spec::Endpoints(EndpointsSpec {
                        addresses: vec![format!("172.16.{ti}.{}", j + 1)],
                    }),
                );
                (service, endpoints)
            };
            let ex = store.exempt();
            let _ = ex.create(ns_obj);
            for j in 0..n {
                let (s, e) = svc(j);
                let _ = ex.create(s);
                let _ = ex.create(e);
            }
        }
        Ok(())
    }

    fn wire(&self) {
        if self.scenario.baseline_mode {
            let (tracer, load) = (self.tracer.clone(), Arc::downgrade(&self.load));
            self.cluster.informer.add_handler(Arc::new(
                move |t: EventType, obj: &VersionedObject| {
                    if t == EventType::Deleted || obj.key.kind != Kind::Pod {
                        return;
                    }
                    let Some(ready_at) = obj
                        .status
                        .as_pod()
                        .filter(|p| p.ready)
                        .and_then(|p| p.ready_at)
                    else {
                        return;
                    };
                    let tenant = TenantId::new(&obj.key.namespace);
                    let pod = format!("{TENANT_NAMESPACE}/{}", obj.key.name);
                    if tracer.direct_ready(&tenant, &pod, ready_at) {
                        if let Some(l) = load.upgrade() {
                            l.on_ready(&tenant);
                        }
                    }
                },
            ));
        } else {
            let (tracer, load) = (self.tracer.clone(), Arc::downgrade(&self.load));
            self.syncer
                .set_observer(Arc::new(move |r: &ReconcileReport| {
                    if tracer.observe(r) {
                        if let Some(l) = load.upgrade() {
                            l.on_ready(&r.tenant);
                        }
                    }
                }));
        }
    }

    /// Registers tenants and starts watches and periodic tasks. Load starts
    /// after the scenario's warmup.
    pub fn start(&self) -> Result<(), SyncError> {
        self.cluster.start();
        if !self.scenario.baseline_mode {
            for t in &self.tenants {
                self.syncer.register_tenant(t.record.clone())?;
            }
            self.syncer.start();
            self.syncer.start_periodic();
        }
        self.schedule_sample();
        Ok(())
    }

    fn schedule_sample(&self) {
        let samples = self.samples.clone();
        let sampling = self.sampling.clone();
        let syncer = self.syncer.clone();
        let sched = self.cluster.scheduler.clone();
        let store = self.super_store.clone();
        let timer = self.timer.clone();
        let interval = self.scenario.sample_interval;
        sample_loop(
            timer,
            interval,
            Arc::new(move |now| {
                if !sampling.load(Ordering::Relaxed) {
                    return false;
                }
                samples.lock().push(DepthSample {
                    t_us: now,
                    downward: syncer.queue(crate::syncer::Direction::Downward).len(),
                    upward: syncer.queue(crate::syncer::Direction::Upward).len(),
                    scheduler: sched.queue_len(),
                    window_in_use: syncer.window().in_use(),
                    super_objects: store.len(),
                });
                true
            }),
        );
    }

    pub fn is_complete(&self) -> bool {
        self.tracer.completed_count() >= self.scenario.pods_total()
    }

    pub fn stop_sampling(&self) {
        self.sampling.store(false, Ordering::Relaxed);
    }

    pub fn report(&self) -> Report {
        let audit = self.syncer.audit().summary();
        let (mut relists, mut dropped) = (0, 0);
        if !self.scenario.baseline_mode {
            for inf in self.syncer.informers() {
                let s = inf.stats();
                relists += s.relists;
                dropped += s.dropped;
            }
        }
        let stats = RunStats {
            pods_created: self.load.created(),
            bind_times: self.cluster.scheduler.bind_times(),
            queue_depth: self.samples.lock().clone(),
            audit_writes: audit.writes,
            audit_violations: audit.violations,
            audit_foreign: audit.foreign,
            informer_relists: relists,
            notifications_dropped: dropped,
        };
        Report::build(&self.scenario, self.tracer.traces(), stats)
    }
}

type SampleFn = Arc<dyn Fn(Micros) -> bool + Send + Sync>;

fn sample_loop(timer: Arc<dyn Timer>, interval: Micros, f: SampleFn) {
    let t = timer.clone();
    timer.schedule_after(
        interval,
        Box::new(move || {
            if f(t.now()) {
                sample_loop(t, interval, f);
            }
        }),
    );
}

struct TenantLoad {
    store: Arc<ObjectStore>,
    namespace: String,
    pattern: LoadPattern,
    pods: usize,
    next: usize,
}

/// Creates pods on behalf of tenants: all at once for burst tenants, one
/// after another for sequential ones. Rate-limited creates are retried when
/// the store says a token is available.
pub struct LoadGen {
    tenants: Mutex<BTreeMap<TenantId, TenantLoad>>,
    tracer: Arc<Tracer>,
    timer: Arc<dyn Timer>,
    created: AtomicUsize,
    me: Weak<LoadGen>,
}

impl LoadGen {
    fn new(
        scenario: &Scenario,
        tenants: &[TenantHandle],
        super_store: &Arc<ObjectStore>,
        tracer: Arc<Tracer>,
        timer: Arc<dyn Timer>,
    ) -> Arc<Self> {
        let map = tenants
            .iter()
            .map(|t| {
                let id = t.record.tenant_id.clone();
                // Baseline pods go straight to the super cluster, one
                // namespace per tenant.
                let (store, namespace) = if scenario.baseline_mode {
                    (super_store.clone(), id.to_string())
                } else {
                    (t.record.store.clone(), TENANT_NAMESPACE.to_string())
                };
                let load = TenantLoad {
                    store,
                    namespace,
                    pattern: t.pattern,
                    pods: t.pods,
                    next: 0,
                };
                (id, load)
            })
            .collect();
        Arc::new_cyclic(|me| LoadGen {
            tenants: Mutex::new(map),
            tracer,
            timer,
            created: AtomicUsize::new(0),
            me: me.clone(),
        })
    }

    /// Store and namespace the tenant's objects are written to.
    pub fn target(&self, tenant: &TenantId) -> (Arc<ObjectStore>, String) {
        let t = self.tenants.lock();
        let l = &t[tenant];
        (l.store.clone(), l.namespace.clone())
    }

    pub fn created(&self) -> usize {
        self.created.load(Ordering::Relaxed)
    }

    pub fn tenant_ids(&self) -> Vec<TenantId> {
        self.tenants.lock().keys().cloned().collect()
    }

    /// Schedules every tenant's initial submissions at `at`.
    pub fn start_at(&self, at: Micros) {
        for tenant in self.tenant_ids() {
            let Some(me) = self.me.upgrade() else { return };
            self.timer
                .schedule_at(at, Box::new(move || me.submit(tenant)));
        }
    }

    /// Submits what the tenant's pattern allows right now.
    fn submit(&self, tenant: TenantId) {
        loop {
            match self.try_create(&tenant) {
                Create::Done => return,
                Create::Created { more: true } if self.is_burst(&tenant) => continue,
                Create::Created { .. } => return,
                Create::RetryAfter(d) => {
                    let Some(me) = self.me.upgrade() else { return };
                    self.timer
                        .schedule_after(d, Box::new(move || me.submit(tenant)));
                    return;
                }
            }
        }
    }

    pub fn is_burst(&self, tenant: &TenantId) -> bool {
        self.tenants.lock()[tenant].pattern == LoadPattern::Burst
    }

    /// Creates the tenant's next pod, if any remain.
    pub fn try_create(&self, tenant: &TenantId) -> Create {
        let (store, ns, idx) = {
            let t = self.tenants.lock();
            let l = &t[tenant];
            if l.next >= l.pods {
                return Create::Done;
            }
            (l.store.clone(), l.namespace.clone(), l.next)
        };
        let name = format!("pod-{idx:05}");
        let spec = PodSpec {
            containers: vec!["app".into()],
            ..PodSpec::default()
        };
        let obj = NewObject::pod(&ns, &name, spec).with_label("tenant", tenant.as_str());
        match store.create(obj) {
            Ok(o) => {
                self.tracer
                    .created(tenant, &format!("{TENANT_NAMESPACE}/{name}"), o.created_at);
                self.created.fetch_add(1, Ordering::Relaxed);
                let mut t = self.tenants.lock();
                let l = t.get_mut(tenant).expect("known tenant");
                l.next += 1;
                Create::Created {
                    more: l.next < l.pods,
                }
            }
            Err(StoreError::RateLimited { retry_after_us }) => Create::RetryAfter(retry_after_us),
            Err(e) => {
                tracing::warn!(%tenant, error = %e, "pod create failed");
                Create::RetryAfter(1_000)
            }
        }
    }

    /// A pod of `tenant` became ready; sequential tenants submit the next.
    pub fn on_ready(&self, tenant: &TenantId) {
        let sequential = self
            .tenants
            .lock()
            .get(tenant)
            .is_some_and(|l| l.pattern == LoadPattern::Sequential);
        if sequential {
            self.submit(tenant.clone());
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Create {
    Created { more: bool },
    Done,
    RetryAfter(Micros),
}
