//! Versioned, watchable in-memory object store: the apiserver stand-in used for
//! every tenant control plane and for the super cluster.
//!
//! All writes go through one commit point per store. Every commit gets the next
//! store version, is appended to the per-kind history, and is fanned out to live
//! watchers without blocking: a watcher whose buffer is full is cancelled and
//! has to relist.

mod ratelimit;
mod watch;

use std::collections::{BTreeMap, VecDeque};
use std::io::{self, Write};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crossbeam_channel::{unbounded, Sender};
use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::clock::{Clock, Micros, SimClock};
use crate::model::{Change, Kind, NewObject, ObjectKey, Uid, VersionedObject};

pub use ratelimit::RateLimitPolicy;
pub use watch::{EventType, Poll, WatchEvent, WatchStream};

use ratelimit::TokenBucket;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StoreError {
    #[error("{0} already exists")]
    AlreadyExists(ObjectKey),
    #[error("{0} not found")]
    NotFound(ObjectKey),
    #[error("conflict on {key}: expected version {expected}, found {actual}")]
    Conflict {
        key: ObjectKey,
        expected: u64,
        actual: u64,
    },
    #[error("uid precondition failed for {0}")]
    UidMismatch(ObjectKey),
    #[error("rate limited, retry after {retry_after_us}us")]
    RateLimited { retry_after_us: Micros },
    #[error("watch of {kind} from version {requested} is too old (compacted through {compacted_through})")]
    VersionTooOld {
        kind: Kind,
        requested: u64,
        compacted_through: u64,
    },
    #[error("watch version {requested} is ahead of store version {current}")]
    FutureVersion { requested: u64, current: u64 },
}

/// Mutating admission applied to every create, under the commit lock.
/// Hooks must not call back into the store.
pub type AdmissionHook = Arc<dyn Fn(&mut NewObject) + Send + Sync>;

#[derive(Debug, Clone)]
pub struct StoreConfig {
    pub rate_limit: Option<RateLimitPolicy>,
    pub history_per_kind: usize,
    pub watch_buffer: usize,
    pub uid_seed: u64,
}

impl Default for StoreConfig {
    fn default() -> Self {
        Self {
            rate_limit: None,
            history_per_kind: 10_000,
            watch_buffer: 1 << 16,
            uid_seed: 0,
        }
    }
}

impl StoreConfig {
    pub fn tenant(uid_seed: u64) -> Self {
        Self {
            rate_limit: Some(RateLimitPolicy::tenant_default()),
            uid_seed,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommitRecord {
    pub version: u64,
    pub event_type: EventType,
    pub key: ObjectKey,
    pub at: Micros,
}

struct Watcher {
    kind: Kind,
    tx: Sender<Arc<WatchEvent>>,
    limit: usize,
}

struct Inner {
    objects: BTreeMap<ObjectKey, VersionedObject>,
    version: u64,
    history: BTreeMap<Kind, VecDeque<Arc<WatchEvent>>>,
    compacted_through: BTreeMap<Kind, u64>,
    watchers: Vec<Watcher>,
    log: Vec<CommitRecord>,
    rng: ChaCha8Rng,
    limiter: Option<TokenBucket>,
    admission: Option<AdmissionHook>,
}

pub struct ObjectStore {
    name: String,
    clock: Arc<dyn Clock>,
    config: StoreConfig,
    inner: Mutex<Inner>,
    commits: AtomicU64,
    cancellations: AtomicU64,
    list_calls: Mutex<BTreeMap<Kind, u64>>,
}

impl std::fmt::Debug for ObjectStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ObjectStore")
            .field("name", &self.name)
            .field("version", &self.current_version())
            .finish()
    }
}

impl ObjectStore {
    pub fn new(name: impl Into<String>, clock: Arc<dyn Clock>, config: StoreConfig) -> Self {
        let now = clock.now_us();
        let inner = Inner {
            objects: BTreeMap::new(),
            version: 0,
            history: BTreeMap::new(),
            compacted_through: BTreeMap::new(),
            watchers: Vec::new(),
            log: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(config.uid_seed),
            limiter: config.rate_limit.map(|p| TokenBucket::new(p, now)),
            admission: None,
        };
        ObjectStore {
            name: name.into(),
            clock,
            config,
            inner: Mutex::new(inner),
            commits: AtomicU64::new(0),
            cancellations: AtomicU64::new(0),
            list_calls: Mutex::new(BTreeMap::new()),
        }
    }

    /// Unlimited store on a frozen virtual clock; handy in tests.
    pub fn simple(name: &str) -> Arc<Self> {
        Arc::new(Self::new(
            name,
            Arc::new(SimClock::new()),
            StoreConfig::default(),
        ))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn set_admission_hook(&self, hook: AdmissionHook) {
        self.inner.lock().admission = Some(hook);
    }

    pub fn current_version(&self) -> u64 {
        self.inner.lock().version
    }

    /// Number of commits so far; cheap to poll for change detection.
    pub fn commit_count(&self) -> u64 {
        self.commits.load(Ordering::Acquire)
    }

    /// Changes whenever a commit happens or watchers are cancelled, so
    /// consumers can skip polling an idle store.
    pub fn change_token(&self) -> u64 {
        self.commits.load(Ordering::Acquire) + self.cancellations.load(Ordering::Acquire)
    }

    pub fn len(&self) -> usize {
        self.inner.lock().objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes that bypass the rate limiter, as a privileged client would.
    pub fn exempt(&self) -> Exempt<'_> {
        Exempt(self)
    }

    pub fn create(&self, obj: NewObject) -> Result<VersionedObject, StoreError> {
        self.do_create(obj, true)
    }

    pub fn update(
        &self,
        key: &ObjectKey,
        expected_version: Option<u64>,
        change: Change,
    ) -> Result<VersionedObject, StoreError> {
        self.do_update(key, expected_version, change, true)
    }

    pub fn delete(&self, key: &ObjectKey) -> Result<VersionedObject, StoreError> {
        self.do_delete(key, None, true)
    }

    /// Deletes only if the stored object still has `uid`.
    pub fn delete_uid(&self, key: &ObjectKey, uid: Uid) -> Result<VersionedObject, StoreError> {
        self.do_delete(key, Some(uid), true)
    }

    pub fn get(&self, key: &ObjectKey) -> Result<VersionedObject, StoreError> {
        self.inner
            .lock()
            .objects
            .get(key)
            .cloned()
            .ok_or_else(|| StoreError::NotFound(key.clone()))
    }

    /// Snapshot-consistent list of one kind, optionally restricted to one
    /// namespace, together with the store version it reflects.
    pub fn list(&self, kind: Kind, namespace: Option<&str>) -> (Vec<VersionedObject>, u64) {
        *self.list_calls.lock().entry(kind).or_default() += 1;
        let inner = self.inner.lock();
        let objs = inner
            .objects
            .range(kind_range(kind))
            .take_while(|(k, _)| k.kind == kind)
            .map(|(_, o)| o)
            .filter(|o| namespace.is_none_or(|ns| o.key.namespace == ns))
            .cloned()
            .collect();
        (objs, inner.version)
    }

    pub fn list_calls(&self, kind: Kind) -> u64 {
        self.list_calls.lock().get(&kind).copied().unwrap_or(0)
    }

    /// Replays retained events of `kind` after `from_version`, then streams live ones.
    pub fn watch(&self, kind: Kind, from_version: u64) -> Result<WatchStream, StoreError> {
        let mut inner = self.inner.lock();
        if from_version > inner.version {
            return Err(StoreError::FutureVersion {
                requested: from_version,
                current: inner.version,
            });
        }
        let compacted = inner.compacted_through.get(&kind).copied().unwrap_or(0);
        if from_version < compacted {
            return Err(StoreError::VersionTooOld {
                kind,
                requested: from_version,
                compacted_through: compacted,
            });
        }
        let replay: Vec<_> = inner
            .history
            .get(&kind)
            .map(|h| {
                h.iter()
                    .filter(|e| e.store_version > from_version)
                    .cloned()
                    .collect()
            })
            .unwrap_or_default();
        let (tx, rx) = unbounded();
        let limit = self.config.watch_buffer.max(1) + replay.len();
        for ev in replay {
            tx.send(ev).expect("receiver alive");
        }
        inner.watchers.push(Watcher { kind, tx, limit });
        Ok(WatchStream { kind, rx })
    }

    /// Fault hook: closes every live watch stream, forcing consumers to re-watch.
    pub fn cancel_watchers(&self) {
        self.inner.lock().watchers.clear();
        self.cancellations.fetch_add(1, Ordering::Release);
    }

    /// Fault hook: drops the retained history of `kind`, so re-watching from
    /// any earlier version fails with `VersionTooOld`.
    pub fn compact_history(&self, kind: Kind) {
        let mut inner = self.inner.lock();
        let v = inner.version;
        inner.history.remove(&kind);
        inner.compacted_through.insert(kind, v);
        self.cancellations.fetch_add(1, Ordering::Release);
    }

    pub fn commit_log(&self) -> Vec<CommitRecord> {
        self.inner.lock().log.clone()
    }

    /// Writes the commit log as `version event kind/ns/name` lines.
    pub fn dump_commit_log(&self, out: &mut impl Write) -> io::Result<()> {
        for r in self.inner.lock().log.iter() {
            writeln!(out, "{} {} {}", r.version, r.event_type.as_str(), r.key)?;
        }
        Ok(())
    }

    fn admit(&self, inner: &mut Inner, limited: bool) -> Result<(), StoreError> {
        if !limited {
            return Ok(());
        }
        match inner.limiter.as_mut() {
            Some(bucket) => bucket
                .try_acquire(self.clock.now_us())
                .map_err(|retry_after_us| StoreError::RateLimited { retry_after_us }),
            None => Ok(()),
        }
    }

    fn do_create(&self, mut obj: NewObject, limited: bool) -> Result<VersionedObject, StoreError> {
        let mut inner = self.inner.lock();
        if inner.objects.contains_key(&obj.key) {
            return Err(StoreError::AlreadyExists(obj.key));
        }
        self.admit(&mut inner, limited)?;
        if let Some(hook) = inner.admission.clone() {
            hook(&mut obj);
        }
        let now = self.clock.now_us();
        let version = inner.version + 1;
        let stored = VersionedObject {
            key: obj.key,
            uid: Uid(inner.rng.gen()),
            resource_version: version,
            spec: obj.spec,
            status: obj.status,
            labels: obj.labels,
            annotations: obj.annotations,
            deletion_marked: false,
            created_at: now,
        };
        inner.objects.insert(stored.key.clone(), stored.clone());
        self.commit(&mut inner, EventType::Added, stored.clone(), now);
        Ok(stored)
    }

    fn do_update(
        &self,
        key: &ObjectKey,
        expected_version: Option<u64>,
        change: Change,
        limited: bool,
    ) -> Result<VersionedObject, StoreError> {
        let mut inner = self.inner.lock();
        let current = inner
            .objects
            .get(key)
            .ok_or_else(|| StoreError::NotFound(key.clone()))?;
        if let Some(expected) = expected_version {
            if expected != current.resource_version {
                return Err(StoreError::Conflict {
                    key: key.clone(),
                    expected,
                    actual: current.resource_version,
                });
            }
        }
        self.admit(&mut inner, limited)?;
        let now = self.clock.now_us();
        let version = inner.version + 1;
        let obj = inner.objects.get_mut(key).expect("checked above");
        let Change {
            spec,
            status,
            labels,
            annotations,
            deletion_marked,
        } = change;
        if let Some(s) = spec {
            obj.spec = s;
        }
        if let Some(s) = status {
            obj.status = s;
        }
        if let Some(l) = labels {
            obj.labels = l;
        }
        if let Some(a) = annotations {
            obj.annotations = a;
        }
        if let Some(d) = deletion_marked {
            obj.deletion_marked = d;
        }
        obj.resource_version = version;
        let snapshot = obj.clone();
        self.commit(&mut inner, EventType::Updated, snapshot.clone(), now);
        Ok(snapshot)
    }

    fn do_delete(
        &self,
        key: &ObjectKey,
        uid: Option<Uid>,
        limited: bool,
    ) -> Result<VersionedObject, StoreError> {
        let mut inner = self.inner.lock();
        let current = inner
            .objects
            .get(key)
            .ok_or_else(|| StoreError::NotFound(key.clone()))?;
        if uid.is_some_and(|u| u != current.uid) {
            return Err(StoreError::UidMismatch(key.clone()));
        }
        self.admit(&mut inner, limited)?;
        let now = self.clock.now_us();
        let last = inner.objects.remove(key).expect("checked above");
        self.commit(&mut inner, EventType::Deleted, last.clone(), now);
        Ok(last)
    }

    fn commit(
        &self,
        inner: &mut Inner,
        event_type: EventType,
        object: VersionedObject,
        at: Micros,
    ) {
        inner.version += 1;
        let version = inner.version;
        let kind = object.key.kind;
        inner.log.push(CommitRecord {
            version,
            event_type,
            key: object.key.clone(),
            at,
        });
        let ev = Arc::new(WatchEvent {
            event_type,
            object,
            store_version: version,
            committed_at: at,
        });
        let history = inner.history.entry(kind).or_default();
        history.push_back(ev.clone());
        if history.len() > self.config.history_per_kind {
            let dropped = history.pop_front().expect("non-empty");
            inner.compacted_through.insert(kind, dropped.store_version);
        }
        inner.watchers.retain(|w| {
            if w.kind != kind {
                return true;
            }
            // A watcher that falls `limit` events behind is cut off.
            if w.tx.len() >= w.limit {
                tracing::debug!(store = %self.name, %kind, "watcher overflowed, cancelling");
                self.cancellations.fetch_add(1, Ordering::Release);
                return false;
            }
            w.tx.send(ev.clone()).is_ok()
        });
        self.commits.fetch_add(1, Ordering::Release);
    }
}

/// See [`ObjectStore::exempt`].
pub struct Exempt<'a>(&'a ObjectStore);

impl Exempt<'_> {
    pub fn create(&self, obj: NewObject) -> Result<VersionedObject, StoreError> {
        self.0.do_create(obj, false)
    }

    pub fn update(
        &self,
        key: &ObjectKey,
        expected_version: Option<u64>,
        change: Change,
    ) -> Result<VersionedObject, StoreError> {
        self.0.do_update(key, expected_version, change, false)
    }

    pub fn delete(&self, key: &ObjectKey) -> Result<VersionedObject, StoreError> {
        self.0.do_delete(key, None, false)
    }

    pub fn delete_uid(&self, key: &ObjectKey, uid: Uid) -> Result<VersionedObject, StoreError> {
        self.0.do_delete(key, Some(uid), false)
    }
}

fn kind_range(kind: Kind) -> std::ops::RangeFrom<ObjectKey> {
    ObjectKey {
        kind,
        namespace: String::new(),
        name: String::new(),
    }..
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{PodSpec, Spec, Status};
    use std::collections::BTreeSet;

    fn pod(ns: &str, name: &str) -> NewObject {
        NewObject::pod(ns, name, PodSpec::default())
    }

    fn drain(stream: &WatchStream) -> Vec<Arc<WatchEvent>> {
        let mut out = Vec::new();
        while let Poll::Event(e) = stream.try_next() {
            out.push(e);
        }
        out
    }

    #[test]
    fn create_in_empty_store() {
        let s = ObjectStore::simple("t");
        let w = s.watch(Kind::Pod, 0).unwrap();
        let obj = s.create(pod("a", "p")).unwrap();
        assert_eq!(obj.resource_version, 1);
        let evs = drain(&w);
        assert_eq!(evs.len(), 1);
        assert_eq!(evs[0].event_type, EventType::Added);
        assert!(matches!(
            s.create(pod("a", "p")),
            Err(StoreError::AlreadyExists(_))
        ));
    }

    #[test]
    fn optimistic_concurrency() {
        let s = ObjectStore::simple("t");
        let obj = s.create(pod("a", "p")).unwrap();
        let status = Status::Pod(crate::model::PodStatus {
            ready: true,
            ..Default::default()
        });
        let v2 = s
            .update(
                &obj.key,
                Some(obj.resource_version),
                Change::status(status.clone()),
            )
            .unwrap();
        assert!(v2.resource_version > obj.resource_version);
        let err = s
            .update(
                &obj.key,
                Some(obj.resource_version),
                Change::status(Status::None),
            )
            .unwrap_err();
        assert!(matches!(err, StoreError::Conflict { .. }));
        assert_eq!(s.get(&obj.key).unwrap().status, status);
        assert_eq!(s.get(&obj.key).unwrap().uid, obj.uid);
    }

    #[test]
    fn delete_semantics() {
        let s = ObjectStore::simple("t");
        let w = s.watch(Kind::Pod, 0).unwrap();
        let first = s.create(pod("a", "p")).unwrap();
        s.delete(&first.key).unwrap();
        let evs = drain(&w);
        assert_eq!(evs[1].event_type, EventType::Deleted);
        assert_eq!(evs[1].object.resource_version, first.resource_version);
        assert!(matches!(s.delete(&first.key), Err(StoreError::NotFound(_))));
        assert!(matches!(s.get(&first.key), Err(StoreError::NotFound(_))));
        let second = s.create(pod("a", "p")).unwrap();
        assert_ne!(first.uid, second.uid);
        assert!(matches!(
            s.delete_uid(&second.key, first.uid),
            Err(StoreError::UidMismatch(_))
        ));
    }

    #[test]
    fn uid_generator_never_repeats_across_recreates() {
        let s = ObjectStore::simple("t");
        let mut seen = BTreeSet::new();
        for _ in 0..500 {
            let o = s.create(pod("a", "p")).unwrap();
            assert!(seen.insert(o.uid));
            s.delete(&o.key).unwrap();
        }
    }

    #[test]
    fn list_filters_by_namespace() {
        let s = ObjectStore::simple("t");
        for i in 0..3 {
            s.create(pod("a", &format!("p{i}"))).unwrap();
        }
        for i in 0..2 {
            s.create(pod("b", &format!("p{i}"))).unwrap();
        }
        s.create(NewObject::namespace("a")).unwrap();
        let (objs, v) = s.list(Kind::Pod, Some("a"));
        assert_eq!(objs.len(), 3);
        assert_eq!(v, 6);
        assert_eq!(s.list(Kind::Pod, None).0.len(), 5);
        assert_eq!(s.list(Kind::Namespace, None).0.len(), 1);
        assert_eq!(s.list_calls(Kind::Pod), 2);
    }

    #[test]
    fn watch_replay_and_too_old() {
        let s = ObjectStore::simple("t");
        for i in 0..5 {
            s.create(pod("a", &format!("p{i}"))).unwrap();
        }
        let w = s.watch(Kind::Pod, 0).unwrap();
        let versions: Vec<_> = drain(&w).iter().map(|e| e.store_version).collect();
        assert_eq!(versions, vec![1, 2, 3, 4, 5]);
        s.compact_history(Kind::Pod);
        assert!(matches!(
            s.watch(Kind::Pod, 2),
            Err(StoreError::VersionTooOld { .. })
        ));
        assert!(s.watch(Kind::Pod, 5).is_ok());
        assert!(matches!(
            s.watch(Kind::Pod, 9),
            Err(StoreError::FutureVersion { .. })
        ));
    }

    #[test]
    fn history_window_compacts() {
        let config = StoreConfig {
            history_per_kind: 4,
            ..StoreConfig::default()
        };
        let s = ObjectStore::new("t", Arc::new(SimClock::new()), config);
        for i in 0..10 {
            s.create(pod("a", &format!("p{i}"))).unwrap();
        }
        assert!(s.watch(Kind::Pod, 5).is_err());
        assert_eq!(drain(&s.watch(Kind::Pod, 6).unwrap()).len(), 4);
    }

    #[test]
    fn slow_watcher_is_cancelled_not_blocking() {
        let config = StoreConfig {
            watch_buffer: 2,
            ..StoreConfig::default()
        };
        let s = ObjectStore::new("t", Arc::new(SimClock::new()), config);
        let w = s.watch(Kind::Pod, 0).unwrap();
        for i in 0..5 {
            s.create(pod("a", &format!("p{i}"))).unwrap();
        }
        assert_eq!(drain(&w).len(), 2);
        assert!(matches!(w.try_next(), Poll::Closed));
    }

    #[test]
    fn rate_limited_writes_are_reported() {
        let clock = Arc::new(SimClock::new());
        let config = StoreConfig {
            rate_limit: RateLimitPolicy::new(10.0, 2),
            ..StoreConfig::default()
        };
        let s = ObjectStore::new("t", clock.clone(), config);
        s.create(pod("a", "p0")).unwrap();
        s.create(pod("a", "p1")).unwrap();
        let err = s.create(pod("a", "p2")).unwrap_err();
        assert_eq!(
            err,
            StoreError::RateLimited {
                retry_after_us: 100_000
            }
        );
        assert_eq!(s.len(), 2);
        s.exempt().create(pod("a", "p2")).unwrap();
        clock.advance_to(100_000);
        s.create(pod("a", "p3")).unwrap();
    }

    #[test]
    fn admission_hook_mutates_creates() {
        let s = ObjectStore::simple("t");
        s.set_admission_hook(Arc::new(|obj: &mut NewObject| {
            if let Spec::Pod(p) = &mut obj.spec {
                p.service_epoch_at_admission = 7;
            }
        }));
        let o = s.create(pod("a", "p")).unwrap();
        assert_eq!(o.pod_spec().unwrap().service_epoch_at_admission, 7);
    }

    #[test]
    fn dump_format() {
        let s = ObjectStore::simple("t");
        let o = s.create(pod("a", "p")).unwrap();
        s.delete(&o.key).unwrap();
        let mut buf = Vec::new();
        s.dump_commit_log(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "1 ADDED Pod/a/p\n2 DELETED Pod/a/p\n"
        );
    }
}
