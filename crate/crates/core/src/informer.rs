//! Local cache of one store, kept current by watching it, plus delayed
//! delivery of change notifications to registered handlers.
//!
//! An informer is driven by three calls: [`Informer::pump`] moves committed
//! events from the watch streams into a pending queue, [`Informer::next_due`]
//! reports when the next one becomes visible, and [`Informer::deliver_due`]
//! applies visible events to the cache and notifies handlers. The simulation
//! engine calls these directly; [`Informer::run`] loops over them on a thread.

use std::collections::{BTreeMap, VecDeque};
use std::ops::Bound;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::{Mutex, RwLock};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::clock::{Delay, Micros};
use crate::model::{Kind, ObjectKey, VersionedObject};
use crate::store::{EventType, ObjectStore, Poll, StoreError, WatchStream};

/// Delay between an event's commit and its visibility in the cache.
pub type LagPolicy = Delay;

#[derive(Debug, Clone)]
pub struct InformerConfig {
    pub lag: LagPolicy,
    /// Probability that a handler notification is lost. The cache itself is
    /// still updated, as it would be after the next resync.
    pub drop_probability: f64,
    pub seed: u64,
}

impl Default for InformerConfig {
    fn default() -> Self {
        Self {
            lag: LagPolicy::Uniform {
                min: 1_000,
                max: 5_000,
            },
            drop_probability: 0.0,
            seed: 0,
        }
    }
}

/// Called with each delivered event. For deletions the object is the last
/// state the store held.
pub type EventHandler = Arc<dyn Fn(EventType, &VersionedObject) + Send + Sync>;

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct InformerStats {
    pub delivered: u64,
    pub dropped: u64,
    pub relists: u64,
}

struct Pending {
    due: Micros,
    event_type: EventType,
    object: Arc<VersionedObject>,
}

struct KindWatch {
    kind: Kind,
    stream: Option<WatchStream>,
    version: u64,
}

struct State {
    watches: Vec<KindWatch>,
    pending: VecDeque<Pending>,
    last_due: Micros,
    seen_token: Option<u64>,
    rng: ChaCha8Rng,
    started: bool,
    drop_probability: f64,
}

pub struct Informer {
    name: String,
    store: Arc<ObjectStore>,
    config: InformerConfig,
    cache: RwLock<BTreeMap<ObjectKey, Arc<VersionedObject>>>,
    state: Mutex<State>,
    handlers: RwLock<Vec<EventHandler>>,
    delivered: AtomicU64,
    dropped: AtomicU64,
    relists: AtomicU64,
}

impl Informer {
    pub fn new(
        name: impl Into<String>,
        store: Arc<ObjectStore>,
        kinds: &[Kind],
        config: InformerConfig,
    ) -> Self {
        let watches = kinds
            .iter()
            .map(|&kind| KindWatch {
                kind,
                stream: None,
                version: 0,
            })
            .collect();
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        let drop_probability = config.drop_probability;
        Informer {
            name: name.into(),
            store,
            config,
            cache: RwLock::new(BTreeMap::new()),
            state: Mutex::new(State {
                watches,
                pending: VecDeque::new(),
                last_due: 0,
                seen_token: None,
                rng,
                started: false,
                drop_probability,
            }),
            handlers: RwLock::new(Vec::new()),
            delivered: AtomicU64::new(0),
            dropped: AtomicU64::new(0),
            relists: AtomicU64::new(0),
        }
    }

    /// Fault hook: changes the notification loss rate from now on.
    pub fn set_drop_probability(&self, p: f64) {
        self.state.lock().drop_probability = p.clamp(0.0, 1.0);
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn store(&self) -> &Arc<ObjectStore> {
        &self.store
    }

    pub fn add_handler(&self, handler: EventHandler) {
        self.handlers.write().push(handler);
    }

    /// Initial list of every kind. The listed objects are delivered as
    /// `Added` notifications on the next `deliver_due`.
    pub fn start(&self) {
        let now = self.store.clock().now_us();
        let mut state = self.state.lock();
        if state.started {
            return;
        }
        state.started = true;
        for i in 0..state.watches.len() {
            self.relist(&mut state, i, now);
        }
        self.relists.store(0, Ordering::Relaxed);
    }

    pub fn get(&self, key: &ObjectKey) -> Option<Arc<VersionedObject>> {
        self.cache.read().get(key).cloned()
    }

    pub fn list(&self, kind: Kind) -> Vec<Arc<VersionedObject>> {
        self.list_prefix(kind, "")
    }

    pub fn list_namespace(&self, kind: Kind, namespace: &str) -> Vec<Arc<VersionedObject>> {
        self.scan(kind, namespace, |ns| ns == namespace)
    }

    /// Objects of `kind` whose namespace starts with `prefix`.
    pub fn list_prefix(&self, kind: Kind, prefix: &str) -> Vec<Arc<VersionedObject>> {
        self.scan(kind, prefix, |ns| ns.starts_with(prefix))
    }

    fn scan(
        &self,
        kind: Kind,
        from_ns: &str,
        keep: impl Fn(&str) -> bool,
    ) -> Vec<Arc<VersionedObject>> {
        let start = ObjectKey {
            kind,
            namespace: from_ns.to_string(),
            name: String::new(),
        };
        self.cache
            .read()
            .range((Bound::Included(start), Bound::Unbounded))
            .take_while(|(k, _)| k.kind == kind && keep(&k.namespace))
            .map(|(_, o)| o.clone())
            .collect()
    }

    pub fn cache_len(&self) -> usize {
        self.cache.read().len()
    }

    pub fn stats(&self) -> InformerStats {
        InformerStats {
            delivered: self.delivered.load(Ordering::Relaxed),
            dropped: self.dropped.load(Ordering::Relaxed),
            relists: self.relists.load(Ordering::Relaxed),
        }
    }

    pub fn pending_len(&self) -> usize {
        self.state.lock().pending.len()
    }

    /// Moves newly committed events into the pending queue, relisting any
    /// kind whose stream was closed. Returns whether anything was queued.
    pub fn pump(&self) -> bool {
        let token = self.store.change_token();
        let mut state = self.state.lock();
        if !state.started || state.seen_token == Some(token) {
            return false;
        }
        state.seen_token = Some(token);
        let now = self.store.clock().now_us();
        let before = state.pending.len();
        let mut fresh = Vec::new();
        for i in 0..state.watches.len() {
            let kind = state.watches[i].kind;
            loop {
                let mut closed = state.watches[i].stream.is_none();
                let mut last = None;
                if let Some(stream) = &state.watches[i].stream {
                    loop {
                        match stream.try_next() {
                            Poll::Event(ev) => {
                                last = Some(ev.store_version);
                                fresh.push(ev);
                            }
                            Poll::Empty => break,
                            Poll::Closed => {
                                closed = true;
                                break;
                            }
                        }
                    }
                }
                if let Some(v) = last {
                    state.watches[i].version = v;
                }
                if !closed {
                    break;
                }
                state.watches[i].stream = None;
                if let Err(e) = self.rewatch(&mut state, i) {
                    tracing::debug!(informer = %self.name, %kind, error = %e, "rewatch failed, relisting");
                    // Anything not yet delivered for this kind is superseded by the relist.
                    fresh.retain(|e| e.object.key.kind != kind);
                    state.pending.retain(|p| p.object.key.kind != kind);
                    self.relist(&mut state, i, now);
                    self.relists.fetch_add(1, Ordering::Relaxed);
                }
            }
        }
        fresh.sort_by_key(|e| e.store_version);
        for ev in fresh {
            let lag = self.config.lag.sample(&mut state.rng);
            let due = (ev.committed_at + lag).max(state.last_due);
            state.last_due = due;
            state.pending.push_back(Pending {
                due,
                event_type: ev.event_type,
                object: Arc::new(ev.object.clone()),
            });
        }
        state.pending.len() != before
    }

    fn rewatch(&self, state: &mut State, i: usize) -> Result<(), StoreError> {
        let w = &mut state.watches[i];
        w.stream = Some(self.store.watch(w.kind, w.version)?);
        Ok(())
    }

    /// Lists `kind`, queues the difference against the cache as synthetic
    /// notifications, and watches from the listed version.
    fn relist(&self, state: &mut State, i: usize, now: Micros) {
        let kind = state.watches[i].kind;
        let (objs, version) = self.store.list(kind, None);
        let mut listed: BTreeMap<ObjectKey, VersionedObject> =
            objs.into_iter().map(|o| (o.key.clone(), o)).collect();
        let mut diff = Vec::new();
        for cached in self.list(kind) {
            match listed.remove(&cached.key) {
                None => diff.push((EventType::Deleted, (*cached).clone())),
                Some(o) if o.uid != cached.uid => {
                    diff.push((EventType::Deleted, (*cached).clone()));
                    diff.push((EventType::Added, o));
                }
                Some(o) if o.resource_version != cached.resource_version => {
                    diff.push((EventType::Updated, o))
                }
                Some(_) => {}
            }
        }
        diff.extend(listed.into_values().map(|o| (EventType::Added, o)));
        for (event_type, object) in diff {
            let lag = self.config.lag.sample(&mut state.rng);
            let due = (now + lag).max(state.last_due);
            state.last_due = due;
            state.pending.push_back(Pending {
                due,
                event_type,
                object: Arc::new(object),
            });
        }
        let w = &mut state.watches[i];
        w.version = version;
        w.stream = Some(
            self.store
                .watch(kind, version)
                .expect("watch from a freshly listed version"),
        );
    }

    pub fn next_due(&self) -> Option<Micros> {
        self.state.lock().pending.front().map(|p| p.due)
    }

    /// Applies every pending event due at or before `now` and notifies
    /// handlers. Returns the number of events applied.
    pub fn deliver_due(&self, now: Micros) -> usize {
        let mut batch = Vec::new();
        {
            let mut state = self.state.lock();
            while state.pending.front().is_some_and(|p| p.due <= now) {
                let p = state.pending.pop_front().expect("non-empty");
                let rate = state.drop_probability;
                let drop = rate > 0.0 && state.rng.gen_bool(rate.min(1.0));
                batch.push((p, drop));
            }
        }
        if batch.is_empty() {
            return 0;
        }
        {
            let mut cache = self.cache.write();
            for (p, _) in &batch {
                match p.event_type {
                    EventType::Added | EventType::Updated => {
                        cache.insert(p.object.key.clone(), p.object.clone());
                    }
                    EventType::Deleted => {
                        if cache
                            .get(&p.object.key)
                            .is_some_and(|c| c.uid == p.object.uid)
                        {
                            cache.remove(&p.object.key);
                        }
                    }
                }
            }
        }
        let handlers = self.handlers.read().clone();
        let n = batch.len();
        for (p, drop) in batch {
            if drop {
                self.dropped.fetch_add(1, Ordering::Relaxed);
                continue;
            }
            self.delivered.fetch_add(1, Ordering::Relaxed);
            for h in &handlers {
                h(p.event_type, &p.object);
            }
        }
        n
    }

    /// Drives the informer on the current thread until `stop` is set.
    pub fn run(&self, stop: &AtomicBool) {
        self.start();
        while !stop.load(Ordering::Relaxed) {
            self.pump();
            let now = self.store.clock().now_us();
            self.deliver_due(now);
            let wait = self
                .next_due()
                .map(|d| d.saturating_sub(self.store.clock().now_us()))
                .unwrap_or(1_000)
                .clamp(50, 1_000);
            std::thread::sleep(Duration::from_micros(wait));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::SimClock;
    use crate::model::{NewObject, PodSpec};
    use crate::store::StoreConfig;

    fn setup(lag: LagPolicy) -> (Arc<SimClock>, Arc<ObjectStore>, Informer) {
        let clock = Arc::new(SimClock::new());
        let store = Arc::new(ObjectStore::new("s", clock.clone(), StoreConfig::default()));
        let config = InformerConfig {
            lag,
            ..InformerConfig::default()
        };
        let inf = Informer::new("i", store.clone(), &[Kind::Pod], config);
        (clock, store, inf)
    }

    fn recorder(inf: &Informer) -> Arc<Mutex<Vec<(EventType, String)>>> {
        let seen = Arc::new(Mutex::new(Vec::new()));
        let s = seen.clone();
        inf.add_handler(Arc::new(move |t, o: &VersionedObject| {
            s.lock().push((t, o.key.name.clone()));
        }));
        seen
    }

    #[test]
    fn events_become_visible_after_lag() {
        let (clock, store, inf) = setup(LagPolicy::Fixed(2_000));
        let seen = recorder(&inf);
        inf.start();
        clock.advance_to(100);
        store
            .create(NewObject::pod("a", "p", PodSpec::default()))
            .unwrap();
        inf.pump();
        assert_eq!(inf.next_due(), Some(2_100));
        assert_eq!(inf.deliver_due(2_099), 0);
        assert!(inf
            .get(&ObjectKey::namespaced(Kind::Pod, "a", "p"))
            .is_none());
        assert_eq!(inf.deliver_due(2_100), 1);
        assert!(inf
            .get(&ObjectKey::namespaced(Kind::Pod, "a", "p"))
            .is_some());
        assert_eq!(
            seen.lock().as_slice(),
            &[(EventType::Added, "p".to_string())]
        );
    }

    #[test]
    fn relist_after_cancel_converges() {
        let (clock, store, inf) = setup(LagPolicy::Fixed(0));
        let seen = recorder(&inf);
        for i in 0..3 {
            store
                .create(NewObject::pod("a", &format!("p{i}"), PodSpec::default()))
                .unwrap();
        }
        inf.start();
        inf.deliver_due(0);
        assert_eq!(inf.cache_len(), 3);
        store.cancel_watchers();
        store
            .delete(&ObjectKey::namespaced(Kind::Pod, "a", "p0"))
            .unwrap();
        store
            .create(NewObject::pod("a", "p9", PodSpec::default()))
            .unwrap();
        store.compact_history(Kind::Pod);
        clock.advance_to(10);
        inf.pump();
        inf.deliver_due(10);
        assert_eq!(inf.stats().relists, 1);
        let names: Vec<_> = inf
            .list(Kind::Pod)
            .iter()
            .map(|o| o.key.name.clone())
            .collect();
        assert_eq!(names, vec!["p1", "p2", "p9"]);
        let log = seen.lock();
        assert!(log.contains(&(EventType::Deleted, "p0".to_string())));
        assert!(log.contains(&(EventType::Added, "p9".to_string())));
    }

    #[test]
    fn resume_without_relist_when_history_retained() {
        let (_clock, store, inf) = setup(LagPolicy::Fixed(0));
        inf.start();
        store
            .create(NewObject::pod("a", "p0", PodSpec::default()))
            .unwrap();
        inf.pump();
        store.cancel_watchers();
        store
            .create(NewObject::pod("a", "p1", PodSpec::default()))
            .unwrap();
        inf.pump();
        inf.pump();
        inf.deliver_due(0);
        assert_eq!(inf.stats().relists, 0);
        assert_eq!(inf.cache_len(), 2);
    }

    #[test]
    fn prefix_listing() {
        let (_clock, store, inf) = setup(LagPolicy::Fixed(0));
        for ns in ["t1-aa-x", "t1-aa-y", "t10-bb-x", "t2-cc-x"] {
            store
                .create(NewObject::pod(ns, "p", PodSpec::default()))
                .unwrap();
        }
        inf.start();
        inf.deliver_due(0);
        assert_eq!(inf.list_prefix(Kind::Pod, "t1-aa-").len(), 2);
        assert_eq!(inf.list_namespace(Kind::Pod, "t2-cc-x").len(), 1);
        assert_eq!(inf.list(Kind::Pod).len(), 4);
    }

    #[test]
    fn dropped_notifications_still_update_cache() {
        let clock = Arc::new(SimClock::new());
        let store = Arc::new(ObjectStore::new("s", clock, StoreConfig::default()));
        let inf = Informer::new(
            "i",
            store.clone(),
            &[Kind::Pod],
            InformerConfig {
                lag: LagPolicy::Fixed(0),
                drop_probability: 1.0,
                seed: 1,
            },
        );
        let seen = recorder(&inf);
        inf.start();
        store
            .create(NewObject::pod("a", "p", PodSpec::default()))
            .unwrap();
        inf.pump();
        inf.deliver_due(0);
        assert!(seen.lock().is_empty());
        assert_eq!(inf.cache_len(), 1);
        assert_eq!(inf.stats().dropped, 1);
    }
}
