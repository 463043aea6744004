//! The centralized syncer: one instance serves every tenant control plane.
//!
//! Tenant informers feed a shared downward fair queue; the super-cluster
//! informer feeds an upward fair queue keyed by the owning tenant. Workers
//! take a key, read both caches to decide what to do (`begin`), and later
//! write the result to a store (`finish`); the split lets the discrete-event
//! engine account for reconcile time between the two halves.

mod audit;
mod reconcile;
mod scan;
mod vnode;

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Weak};
use std::time::Duration;

use parking_lot::{Mutex, RwLock};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use audit::{AuditEntry, AuditLog, AuditSummary, Violation, WriteOp, WriteTarget};
pub use vnode::{BindingTable, VNodeBinding};

use crate::backpressure::{AdmissionWindow, Permit};
use crate::clock::{Delay, Micros};
use crate::informer::{Informer, InformerConfig};
use crate::model::{
    mangle_namespace, Fingerprint, Kind, ModelError, NewObject, NodeSpec, NodeStatus, ObjectKey,
    Spec, Status, TenantId, TenantRecord, TenantRegistry, VersionedObject,
};
use crate::store::{EventType, ObjectStore, StoreError};
use crate::timer::Timer;
use crate::workqueue::{Dequeued, FairQueue, Policy, QueueError};

use reconcile::Plan;

/// Annotation naming the tenant a super-cluster object was synced from.
pub const OWNER_ANNOTATION: &str = "vcsim.io/tenant";
/// Annotation carrying the uid of the tenant object a super object mirrors.
pub const UID_ANNOTATION: &str = "vcsim.io/tenant-uid";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Downward,
    Upward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Created,
    Updated,
    Deleted,
    NoOp,
    /// The item can no longer be processed (tenant gone, unmappable name).
    Dropped,
    /// A write lost a race; the key was requeued with backoff.
    Retry,
}

/// Queue key: an object in a tenant's control plane.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct WorkKey {
    pub tenant: TenantId,
    pub key: ObjectKey,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyncWorkItem {
    pub tenant: TenantId,
    pub key: ObjectKey,
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReconcileReport {
    pub direction: Direction,
    pub tenant: TenantId,
    /// Tenant-side key of the object.
    pub key: ObjectKey,
    pub enqueued_at: Micros,
    pub dequeued_at: Micros,
    pub finished_at: Micros,
    pub outcome: Outcome,
    /// Upward only: this write made the tenant Pod ready.
    pub made_ready: bool,
    /// Upward only: when the super-cluster Pod became ready.
    pub super_ready_at: Option<Micros>,
}

pub type Observer = Arc<dyn Fn(&ReconcileReport) + Send + Sync>;

#[derive(Debug, thiserror::Error)]
pub enum SyncError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Queue(#[from] QueueError),
    #[error("pod {0} not found in the super cluster")]
    PodNotFound(ObjectKey),
}

#[derive(Debug, Clone)]
pub struct SyncerConfig {
    pub downward_workers: usize,
    pub upward_workers: usize,
    pub policy: Policy,
    /// Unbound super-cluster Pods the syncer may have outstanding; `None`
    /// disables the window.
    pub admission_window: Option<usize>,
    pub window_lease: Micros,
    pub reconcile_latency: Delay,
    pub retry_base: Micros,
    pub retry_cap: Micros,
    pub scan_interval: Micros,
    pub heartbeat_period: Micros,
    pub informer: InformerConfig,
    pub seed: u64,
}

impl Default for SyncerConfig {
    fn default() -> Self {
        Self {
            downward_workers: 20,
            upward_workers: 100,
            policy: Policy::WeightedRoundRobin,
            admission_window: Some(200),
            window_lease: 30_000_000,
            reconcile_latency: Delay::Uniform {
                min: 500,
                max: 1_500,
            },
            retry_base: 10_000,
            retry_cap: 5_000_000,
            scan_interval: 60_000_000,
            heartbeat_period: 10_000_000,
            informer: InformerConfig::default(),
            seed: 0,
        }
    }
}

/// A dequeued item with its decided action, between `begin` and `finish`.
pub struct Job {
    pub direction: Direction,
    pub item: Dequeued<WorkKey>,
    /// Modeled time the reconcile takes.
    pub duration: Micros,
    plan: Plan,
    permit: Option<Permit>,
}

struct TenantState {
    record: TenantRecord,
    informer: Arc<Informer>,
}

pub struct Syncer {
    config: SyncerConfig,
    timer: Arc<dyn Timer>,
    registry: Arc<TenantRegistry>,
    super_store: Arc<ObjectStore>,
    super_informer: RwLock<Arc<Informer>>,
    tenants: RwLock<BTreeMap<TenantId, TenantState>>,
    down: FairQueue<WorkKey>,
    up: FairQueue<WorkKey>,
    window: AdmissionWindow,
    bindings: Mutex<BindingTable>,
    audit: AuditLog,
    retries: Mutex<HashMap<(Direction, WorkKey), u32>>,
    observer: RwLock<Option<Observer>>,
    rng: Mutex<ChaCha8Rng>,
    informer_epoch: AtomicU64,
    informer_seq: AtomicU64,
    me: Weak<Syncer>,
}

/// Kinds the syncer watches in the super cluster.
const SUPER_KINDS: [Kind; 7] = [
    Kind::Namespace,
    Kind::Pod,
    Kind::Service,
    Kind::Endpoints,
    Kind::Secret,
    Kind::ConfigMap,
    Kind::Node,
];

/// Kinds the syncer watches in each tenant control plane: everything it
/// syncs down, plus the virtual nodes it maintains there.
const TENANT_KINDS: [Kind; 7] = [
    Kind::Namespace,
    Kind::Pod,
    Kind::Service,
    Kind::Endpoints,
    Kind::Secret,
    Kind::ConfigMap,
    Kind::Node,
];

impl Syncer {
    pub fn new(
        config: SyncerConfig,
        timer: Arc<dyn Timer>,
        registry: Arc<TenantRegistry>,
        super_store: Arc<ObjectStore>,
    ) -> Arc<Self> {
        let clock: Arc<dyn crate::clock::Clock> = super_store.clock().clone();
        Arc::new_cyclic(|me: &Weak<Syncer>| {
            let informer = Self::make_super_informer(me, &super_store, &config, 0);
            Syncer {
                down: FairQueue::new(clock.clone(), config.policy),
                up: FairQueue::new(clock, config.policy),
                window: AdmissionWindow::new(config.admission_window, config.window_lease),
                rng: Mutex::new(ChaCha8Rng::seed_from_u64(config.seed ^ 0x5e7)),
                config,
                timer,
                registry,
                super_store,
                super_informer: RwLock::new(informer),
                tenants: RwLock::new(BTreeMap::new()),
                bindings: Mutex::new(BindingTable::default()),
                audit: AuditLog::new(),
                retries: Mutex::new(HashMap::new()),
                observer: RwLock::new(None),
                informer_epoch: AtomicU64::new(0),
                informer_seq: AtomicU64::new(1),
                me: me.clone(),
            }
        })
    }

    fn make_super_informer(
        me: &Weak<Syncer>,
        store: &Arc<ObjectStore>,
        config: &SyncerConfig,
        generation: u64,
    ) -> Arc<Informer> {
        let informer = Arc::new(Informer::new(
            "syncer-super",
            store.clone(),
            &SUPER_KINDS,
            InformerConfig {
                seed: config.informer.seed ^ config.seed ^ generation.wrapping_mul(0x9e37),
                ..config.informer.clone()
            },
        ));
        let weak = me.clone();
        informer.add_handler(Arc::new(move |t: EventType, obj: &VersionedObject| {
            if let Some(s) = weak.upgrade() {
                s.on_super_event(t, obj);
            }
        }));
        informer
    }

    fn make_tenant_informer(&self, record: &TenantRecord) -> Arc<Informer> {
        let n = self.informer_seq.fetch_add(1, Ordering::Relaxed);
        let informer = Arc::new(Informer::new(
            format!("syncer-{}", record.tenant_id),
            record.store.clone(),
            &TENANT_KINDS,
            InformerConfig {
                seed: self.config.informer.seed ^ self.config.seed ^ n.wrapping_mul(0x9e37_79b9),
                ..self.config.informer.clone()
            },
        ));
        let weak = self.me.clone();
        let tenant = record.tenant_id.clone();
        informer.add_handler(Arc::new(move |t: EventType, obj: &VersionedObject| {
            if let Some(s) = weak.upgrade() {
                s.on_tenant_event(&tenant, t, obj);
            }
        }));
        informer
    }

    pub fn config(&self) -> &SyncerConfig {
        &self.config
    }

    pub fn registry(&self) -> &Arc<TenantRegistry> {
        &self.registry
    }

    pub fn super_store(&self) -> &Arc<ObjectStore> {
        &self.super_store
    }

    pub fn set_observer(&self, observer: Observer) {
        *self.observer.write() = Some(observer);
    }

    /// Starts the super-cluster watch.
    pub fn start(&self) {
        self.super_informer.read().start();
    }

    pub fn register_tenant(&self, record: TenantRecord) -> Result<(), SyncError> {
        self.registry.register(record.clone())?;
        for q in [&self.down, &self.up] {
            if let Err(e) = q.register_tenant(record.tenant_id.clone(), record.weight) {
                self.registry.remove(&record.tenant_id);
                return Err(e.into());
            }
        }
        let informer = self.make_tenant_informer(&record);
        informer.start();
        self.tenants
            .write()
            .insert(record.tenant_id.clone(), TenantState { record, informer });
        self.informer_epoch.fetch_add(1, Ordering::Release);
        Ok(())
    }

    /// Tears a tenant down and deletes every super-cluster object synced from
    /// it. Returns how many super objects were removed.
    pub fn unregister_tenant(&self, tenant: &TenantId) -> Result<usize, SyncError> {
        let state = self
            .tenants
            .write()
            .remove(tenant)
            .ok_or_else(|| QueueError::UnknownTenant(tenant.clone()))?;
        self.informer_epoch.fetch_add(1, Ordering::Release);
        self.registry.remove(tenant);
        self.down.remove_tenant(tenant)?;
        self.up.remove_tenant(tenant)?;
        self.bindings.lock().remove_tenant(tenant);
        let prefix = &state.record.prefix;
        let now = self.timer.now();
        let mut removed = 0;
        for kind in Kind::DOWNWARD {
            let (objs, _) = self.super_store.list(kind, None);
            for o in objs {
                let scope = if kind.is_cluster_scoped() {
                    &o.key.name
                } else {
                    &o.key.namespace
                };
                if !scope.starts_with(prefix.as_str()) {
                    continue;
                }
                let ok = self.super_store.exempt().delete_uid(&o.key, o.uid).is_ok();
                self.audit.write(
                    now,
                    tenant,
                    prefix,
                    WriteTarget::Super,
                    WriteOp::Delete,
                    &o.key,
                    ok,
                );
                removed += usize::from(ok);
            }
        }
        tracing::info!(%tenant, removed, "tenant unregistered");
        Ok(removed)
    }

    /// Simulates a syncer process restart: every informer is rebuilt from a
    /// fresh list and the binding table is rebuilt from upward reconciles.
    pub fn restart(&self) {
        let generation = self.informer_seq.fetch_add(1, Ordering::Relaxed);
        let informer =
            Self::make_super_informer(&self.me, &self.super_store, &self.config, generation);
        informer.start();
        *self.super_informer.write() = informer;
        self.bindings.lock().clear();
        let mut tenants = self.tenants.write();
        let records: Vec<_> = tenants.values().map(|t| t.record.clone()).collect();
        for record in records {
            let informer = self.make_tenant_informer(&record);
            informer.start();
            tenants.insert(record.tenant_id.clone(), TenantState { record, informer });
        }
        drop(tenants);
        self.informer_epoch.fetch_add(1, Ordering::Release);
    }

    /// Every informer the syncer owns: the super-cluster one first, then one
    /// per tenant in id order.
    pub fn informers(&self) -> Vec<Arc<Informer>> {
        let mut out = vec![self.super_informer.read().clone()];
        out.extend(self.tenants.read().values().map(|t| t.informer.clone()));
        out
    }

    /// Changes whenever the set returned by [`Syncer::informers`] changes.
    pub fn informer_epoch(&self) -> u64 {
        self.informer_epoch.load(Ordering::Acquire)
    }

    pub fn super_informer(&self) -> Arc<Informer> {
        self.super_informer.read().clone()
    }

    pub fn tenant_informer(&self, tenant: &TenantId) -> Option<Arc<Informer>> {
        self.tenants.read().get(tenant).map(|t| t.informer.clone())
    }

    pub fn tenant_ids(&self) -> Vec<TenantId> {
        self.tenants.read().keys().cloned().collect()
    }

    pub fn queue(&self, direction: Direction) -> &FairQueue<WorkKey> {
        match direction {
            Direction::Downward => &self.down,
            Direction::Upward => &self.up,
        }
    }

    pub fn window(&self) -> &AdmissionWindow {
        &self.window
    }

    pub fn audit(&self) -> &AuditLog {
        &self.audit
    }

    pub fn bindings(&self) -> Vec<VNodeBinding> {
        self.bindings.lock().all()
    }

    fn on_tenant_event(&self, tenant: &TenantId, _t: EventType, obj: &VersionedObject) {
        if Kind::DOWNWARD.contains(&obj.key.kind) {
            self.enqueue(
                Direction::Downward,
                WorkKey {
                    tenant: tenant.clone(),
                    key: obj.key.clone(),
                },
            );
        }
    }

    fn on_super_event(&self, t: EventType, obj: &VersionedObject) {
        let kind = obj.key.kind;
        if !Kind::DOWNWARD.contains(&kind) {
            return;
        }
        let Some(wk) = reconcile::tenant_key_of(&self.registry, &obj.key) else {
            self.audit.record(AuditEntry::Foreign {
                at: self.timer.now(),
                key: obj.key.to_string(),
            });
            return;
        };
        if kind == Kind::Pod {
            let bound = obj.pod_spec().is_some_and(|p| !p.node_name.is_empty());
            if t == EventType::Deleted || bound {
                self.window.release_key(&obj.key);
            }
            if t == EventType::Deleted {
                self.enqueue(Direction::Downward, wk.clone());
            }
            self.enqueue(Direction::Upward, wk);
        } else if t != EventType::Added {
            // Drift or deletion on the super side: let the tenant's copy win.
            self.enqueue(Direction::Downward, wk);
        }
    }

    pub fn enqueue(&self, direction: Direction, wk: WorkKey) -> bool {
        let tenant = wk.tenant.clone();
        match self.queue(direction).enqueue(&tenant, wk) {
            Ok(accepted) => accepted,
            Err(e) => {
                tracing::debug!(%tenant, error = %e, "enqueue rejected");
                false
            }
        }
    }

    /// Takes the next item of `direction` and decides what to do with it.
    /// Downward items first need a slot in the admission window.
    pub fn begin(&self, direction: Direction) -> Option<Job> {
        let permit = match direction {
            Direction::Downward => Some(self.window.try_acquire()?),
            Direction::Upward => None,
        };
        let Some(item) = self.queue(direction).try_dequeue() else {
            if let Some(p) = permit {
                self.window.release(p);
            }
            return None;
        };
        Some(self.prepare(direction, item, permit))
    }

    /// Like `begin`, but waits up to `timeout` for work (realtime mode).
    pub fn begin_wait(&self, direction: Direction, timeout: Duration) -> Option<Job> {
        let permit = match direction {
            Direction::Downward => match self.window.try_acquire() {
                Some(p) => Some(p),
                None => {
                    std::thread::sleep(Duration::from_micros(100));
                    return None;
                }
            },
            Direction::Upward => None,
        };
        match self.queue(direction).wait_dequeue(timeout) {
            Ok(Some(item)) => Some(self.prepare(direction, item, permit)),
            _ => {
                if let Some(p) = permit {
                    self.window.release(p);
                }
                None
            }
        }
    }

    fn prepare(
        &self,
        direction: Direction,
        item: Dequeued<WorkKey>,
        permit: Option<Permit>,
    ) -> Job {
        let plan = self.plan(direction, &item.key);
        let duration = self.config.reconcile_latency.sample(&mut *self.rng.lock());
        Job {
            direction,
            item,
            duration,
            plan,
            permit,
        }
    }

    /// Applies the job's plan, releases the key and reports the outcome.
    pub fn finish(&self, job: Job) -> Outcome {
        let Job {
            direction,
            item,
            plan,
            mut permit,
            ..
        } = job;
        let wk = item.key.clone();
        let result = self.apply(&wk, plan, &mut permit);
        if let Some(p) = permit {
            self.window.release(p);
        }
        let now = self.timer.now();
        let (outcome, made_ready, super_ready_at) = match result {
            Ok(a) => {
                self.retries.lock().remove(&(direction, wk.clone()));
                (a.outcome, a.made_ready, a.super_ready_at)
            }
            Err(e) => {
                tracing::debug!(tenant = %wk.tenant, key = %wk.key, error = %e, "reconcile failed, requeueing");
                self.schedule_retry(direction, wk.clone());
                (Outcome::Retry, false, None)
            }
        };
        let _ = self.queue(direction).done(&wk);
        self.audit.record(AuditEntry::Reconcile {
            at: now,
            tenant: wk.tenant.clone(),
            direction,
            key: wk.key.to_string(),
            outcome,
        });
        let observer = self.observer.read().clone();
        if let Some(obs) = observer {
            obs(&ReconcileReport {
                direction,
                tenant: wk.tenant,
                key: wk.key,
                enqueued_at: item.enqueued_at,
                dequeued_at: item.dequeued_at,
                finished_at: now,
                outcome,
                made_ready,
                super_ready_at,
            });
        }
        outcome
    }

    fn schedule_retry(&self, direction: Direction, wk: WorkKey) {
        let n = {
            let mut r = self.retries.lock();
            let n = r.entry((direction, wk.clone())).or_insert(0);
            *n += 1;
            *n
        };
        let delay = self
            .config
            .retry_base
            .saturating_mul(1 << (n - 1).min(20))
            .min(self.config.retry_cap);
        let Some(me) = self.me.upgrade() else { return };
        self.timer.schedule_after(
            delay,
            Box::new(move || {
                me.enqueue(direction, wk);
            }),
        );
    }

    /// Realtime worker loop for one direction.
    pub fn run_worker(&self, direction: Direction, stop: &AtomicBool) {
        while !stop.load(Ordering::Relaxed) {
            if let Some(job) = self.begin_wait(direction, Duration::from_millis(2)) {
                std::thread::sleep(Duration::from_micros(job.duration));
                self.finish(job);
            }
        }
    }

    /// Schedules the periodic scan and heartbeat broadcast on the timer.
    pub fn start_periodic(&self) {
        if self.config.scan_interval > 0 {
            self.schedule_scan();
        }
        if self.config.heartbeat_period > 0 {
            self.schedule_heartbeat();
        }
    }

    fn schedule_scan(&self) {
        let Some(me) = self.me.upgrade() else { return };
        self.timer.schedule_after(
            self.config.scan_interval,
            Box::new(move || {
                me.scan_all();
                me.schedule_scan();
            }),
        );
    }

    fn schedule_heartbeat(&self) {
        let Some(me) = self.me.upgrade() else { return };
        self.timer.schedule_after(
            self.config.heartbeat_period,
            Box::new(move || {
                me.broadcast_heartbeats();
                me.schedule_heartbeat();
            }),
        );
    }

    /// Creates the tenant's virtual node for `node` if it does not exist.
    pub fn ensure_vnode(&self, tenant: &TenantId, node: &str) -> bool {
        let _bindings = self.bindings.lock();
        self.ensure_vnode_locked(tenant, node, false)
    }

    /// Caller holds the binding lock, so vnode writes follow binding changes
    /// in order. The tenant cache can lag a delete we just made; `force`
    /// skips it and asks the store.
    fn ensure_vnode_locked(&self, tenant: &TenantId, node: &str, force: bool) -> bool {
        let Some((record, informer)) = self.tenant_parts(tenant) else {
            return false;
        };
        let key = ObjectKey::cluster(Kind::Node, node);
        if !force && informer.get(&key).is_some() {
            return false;
        }
        let physical = self.super_informer().get(&key);
        let obj = NewObject::new(
            key.clone(),
            Spec::Node(NodeSpec {
                mirrors: node.to_string(),
                capacity: physical
                    .as_ref()
                    .and_then(|n| match &n.spec {
                        Spec::Node(s) => Some(s.capacity),
                        _ => None,
                    })
                    .unwrap_or(0),
            }),
        )
        .with_status(Status::Node(NodeStatus {
            last_heartbeat: physical.as_deref().and_then(node_heartbeat),
        }));
        match record.store.exempt().create(obj) {
            Ok(_) => {
                self.audit_tenant_write(&record, WriteOp::Create, &key, true);
                true
            }
            Err(StoreError::AlreadyExists(_)) => false,
            Err(_) => {
                self.audit_tenant_write(&record, WriteOp::Create, &key, false);
                false
            }
        }
    }

    /// Removes virtual nodes no tenant Pod is bound to. Returns how many.
    pub fn gc_vnodes(&self) -> usize {
        self.tenant_ids()
            .iter()
            .map(|t| self.gc_tenant_vnodes(t))
            .sum()
    }

    fn gc_tenant_vnodes(&self, tenant: &TenantId) -> usize {
        let Some((_, informer)) = self.tenant_parts(tenant) else {
            return 0;
        };
        let b = self.bindings.lock();
        let stale: Vec<String> = informer
            .list(Kind::Node)
            .into_iter()
            .filter(|n| !b.is_bound(tenant, &n.key.name))
            .map(|n| n.key.name.clone())
            .collect();
        stale
            .iter()
            .filter(|node| self.delete_vnode(tenant, node))
            .count()
    }

    /// Caller holds the binding lock.
    fn delete_vnode(&self, tenant: &TenantId, node: &str) -> bool {
        let Some((record, _)) = self.tenant_parts(tenant) else {
            return false;
        };
        let key = ObjectKey::cluster(Kind::Node, node);
        match record.store.exempt().delete(&key) {
            Ok(_) => {
                self.audit_tenant_write(&record, WriteOp::Delete, &key, true);
                true
            }
            Err(StoreError::NotFound(_)) => false,
            Err(_) => {
                self.audit_tenant_write(&record, WriteOp::Delete, &key, false);
                false
            }
        }
    }

    /// Copies fresh physical-node heartbeats onto every virtual node that
    /// mirrors them. Returns the number of virtual nodes refreshed.
    pub fn broadcast_heartbeats(&self) -> usize {
        let now = self.timer.now();
        let period = self.config.heartbeat_period;
        let sup = self.super_informer();
        let bindings = self.bindings.lock().all();
        let mut updated = 0;
        for b in bindings {
            let Some(hb) = sup
                .get(&ObjectKey::cluster(Kind::Node, &b.node_name))
                .and_then(|n| node_heartbeat(&n))
            else {
                continue;
            };
            if now.saturating_sub(hb) > period || b.last_heartbeat == Some(hb) {
                continue;
            }
            let Some((record, _)) = self.tenant_parts(&b.tenant) else {
                continue;
            };
            let key = ObjectKey::cluster(Kind::Node, &b.node_name);
            let status = Status::Node(NodeStatus {
                last_heartbeat: Some(hb),
            });
            let ok = record
                .store
                .exempt()
                .update(&key, None, crate::model::Change::status(status))
                .is_ok();
            self.audit_tenant_write(&record, WriteOp::Update, &key, ok);
            if ok {
                self.bindings
                    .lock()
                    .set_heartbeat(&b.tenant, &b.node_name, hb);
                updated += 1;
            }
        }
        updated
    }

    /// Maps a tenant credential and tenant Pod to the super-cluster Pod a
    /// node agent should serve.
    pub fn resolve_proxy_target(
        &self,
        fingerprint: &Fingerprint,
        tenant_pod: &ObjectKey,
    ) -> Result<ObjectKey, SyncError> {
        let record = self.registry.resolve_tenant_by_credential(fingerprint)?;
        let ns = mangle_namespace(&record, &tenant_pod.namespace)?;
        let key = ObjectKey::namespaced(Kind::Pod, &ns, &tenant_pod.name);
        if self.super_informer().get(&key).is_none() {
            return Err(SyncError::PodNotFound(tenant_pod.clone()));
        }
        Ok(key)
    }

    fn tenant_parts(&self, tenant: &TenantId) -> Option<(TenantRecord, Arc<Informer>)> {
        self.tenants
            .read()
            .get(tenant)
            .map(|t| (t.record.clone(), t.informer.clone()))
    }

    fn audit_tenant_write(&self, record: &TenantRecord, op: WriteOp, key: &ObjectKey, ok: bool) {
        self.audit.write(
            self.timer.now(),
            &record.tenant_id,
            &record.prefix,
            WriteTarget::Tenant(record.tenant_id.clone()),
            op,
            key,
            ok,
        );
    }

    fn audit_super_write(&self, record: &TenantRecord, op: WriteOp, key: &ObjectKey, ok: bool) {
        self.audit.write(
            self.timer.now(),
            &record.tenant_id,
            &record.prefix,
            WriteTarget::Super,
            op,
            key,
            ok,
        );
    }
}

fn node_heartbeat(node: &VersionedObject) -> Option<Micros> {
    match &node.status {
        Status::Node(s) => s.last_heartbeat,
        _ => None,
    }
}

/// Result of applying a plan.
struct Applied {
    outcome: Outcome,
    made_ready: bool,
    super_ready_at: Option<Micros>,
}

impl Applied {
    fn of(outcome: Outcome) -> Self {
        Applied {
            outcome,
            made_ready: false,
            super_ready_at: None,
        }
    }
}

type ApplyResult = Result<Applied, StoreError>;
