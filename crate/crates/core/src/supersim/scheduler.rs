use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Weak};
use std::time::Duration;

use parking_lot::Mutex;

use crate::clock::Micros;
use crate::model::{Change, LabelSelector, ObjectKey, PodSpec, Spec, VersionedObject};
use crate::store::{ObjectStore, StoreError};
use crate::timer::Timer;

#[derive(Debug, Clone)]
pub struct SchedulerConfig {
    pub service_time: Micros,
    pub backoff_base: Micros,
    pub backoff_cap: Micros,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            service_time: 2_500,
            backoff_base: 100_000,
            backoff_cap: 10_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScheduleOutcome {
    Bound {
        node: String,
    },
    Unschedulable {
        retry_after: Micros,
    },
    /// The Pod was deleted or bound by someone else meanwhile.
    Gone,
}

#[derive(Debug, Clone)]
struct Placed {
    key: ObjectKey,
    labels: BTreeMap<String, String>,
    anti_affinity: Option<BTreeSet<LabelSelector>>,
}

#[derive(Debug)]
struct NodeState {
    name: String,
    capacity: u32,
    pods: Vec<Placed>,
    /// Placed pods that carry anti-affinity terms.
    anti: usize,
}

impl NodeState {
    fn add(&mut self, p: Placed) {
        self.anti += usize::from(p.anti_affinity.is_some());
        self.pods.push(p);
    }

    fn remove(&mut self, key: &ObjectKey) {
        if let Some(i) = self.pods.iter().position(|p| &p.key == key) {
            let p = self.pods.remove(i);
            self.anti -= usize::from(p.anti_affinity.is_some());
        }
    }
}

#[derive(Debug, Default)]
struct Inner {
    nodes: Vec<NodeState>,
    placed: HashMap<ObjectKey, usize>,
    queue: VecDeque<ObjectKey>,
    queued: HashSet<ObjectKey>,
    busy: Option<ObjectKey>,
    backoff: HashMap<ObjectKey, u32>,
    binds: Vec<Micros>,
    unschedulable: u64,
}

/// The super cluster's scheduler: one FIFO of unscheduled Pods, one Pod at a
/// time, each taking `service_time`.
pub struct Scheduler {
    store: Arc<ObjectStore>,
    timer: Arc<dyn Timer>,
    config: SchedulerConfig,
    inner: Mutex<Inner>,
    me: Weak<Scheduler>,
}

fn selectors_match(
    sel: &Option<BTreeSet<LabelSelector>>,
    labels: &BTreeMap<String, String>,
) -> bool {
    sel.as_ref()
        .is_some_and(|s| s.iter().any(|sel| sel.matches(labels)))
}

impl Scheduler {
    pub fn new(
        store: Arc<ObjectStore>,
        timer: Arc<dyn Timer>,
        config: SchedulerConfig,
        nodes: &[(String, u32)],
    ) -> Arc<Self> {
        let inner = Inner {
            nodes: nodes
                .iter()
                .map(|(name, capacity)| NodeState {
                    name: name.clone(),
                    capacity: *capacity,
                    pods: Vec::new(),
                    anti: 0,
                })
                .collect(),
            ..Inner::default()
        };
        Arc::new_cyclic(|me| Scheduler {
            store,
            timer,
            config,
            inner: Mutex::new(inner),
            me: me.clone(),
        })
    }

    pub fn config(&self) -> &SchedulerConfig {
        &self.config
    }

    /// Adds an unbound Pod to the scheduling queue (idempotent).
    pub fn enqueue(&self, key: ObjectKey) {
        let mut inner = self.inner.lock();
        if inner.placed.contains_key(&key)
            || inner.queued.contains(&key)
            || inner.busy.as_ref() == Some(&key)
        {
            return;
        }
        inner.queued.insert(key.clone());
        inner.queue.push_back(key);
    }

    /// Records a Pod that is already bound (e.g. observed after a restart).
    pub fn observe_bound(&self, pod: &VersionedObject) {
        let Some(spec) = pod.pod_spec() else { return };
        let mut inner = self.inner.lock();
        if spec.node_name.is_empty() || inner.placed.contains_key(&pod.key) {
            return;
        }
        if let Some(i) = inner.nodes.iter().position(|n| n.name == spec.node_name) {
            inner.nodes[i].add(Placed {
                key: pod.key.clone(),
                labels: pod.labels.clone(),
                anti_affinity: spec.anti_affinity.clone(),
            });
            inner.placed.insert(pod.key.clone(), i);
        }
    }

    /// Frees whatever the deleted Pod held.
    pub fn forget(&self, key: &ObjectKey) {
        let mut inner = self.inner.lock();
        if inner.queued.remove(key) {
            inner.queue.retain(|k| k != key);
        }
        inner.backoff.remove(key);
        if let Some(i) = inner.placed.remove(key) {
            inner.nodes[i].remove(key);
        }
    }

    pub fn is_busy(&self) -> bool {
        self.inner.lock().busy.is_some()
    }

    pub fn queue_len(&self) -> usize {
        self.inner.lock().queue.len()
    }

    /// Takes the next Pod if idle. Returns when its service time ends; the
    /// caller must call [`Scheduler::finish`] at that time.
    pub fn try_start(&self, now: Micros) -> Option<Micros> {
        let mut inner = self.inner.lock();
        if inner.busy.is_some() {
            return None;
        }
        let key = inner.queue.pop_front()?;
        inner.queued.remove(&key);
        inner.busy = Some(key);
        Some(now + self.config.service_time)
    }

    pub fn finish(&self, now: Micros) -> ScheduleOutcome {
        let Some(key) = self.inner.lock().busy.take() else {
            return ScheduleOutcome::Gone;
        };
        let outcome = self.bind(&key, now);
        if let ScheduleOutcome::Unschedulable { retry_after } = outcome {
            if let Some(me) = self.me.upgrade() {
                self.timer
                    .schedule_after(retry_after, Box::new(move || me.enqueue(key)));
            }
        }
        outcome
    }

    fn bind(&self, key: &ObjectKey, now: Micros) -> ScheduleOutcome {
        let pod = match self.store.get(key) {
            Ok(p) => p,
            Err(_) => return ScheduleOutcome::Gone,
        };
        let Some(spec) = pod.pod_spec() else {
            return ScheduleOutcome::Gone;
        };
        if !spec.node_name.is_empty() {
            self.observe_bound(&pod);
            return ScheduleOutcome::Gone;
        }
        let mut inner = self.inner.lock();
        let Some(i) = pick_node(&inner.nodes, &pod, spec) else {
            inner.unschedulable += 1;
            let n = inner.backoff.entry(key.clone()).or_insert(0);
            let retry_after = self
                .config
                .backoff_base
                .saturating_mul(1 << (*n).min(20))
                .min(self.config.backoff_cap);
            *n += 1;
            tracing::debug!(pod = %key, retry_after, "no feasible node");
            return ScheduleOutcome::Unschedulable { retry_after };
        };
        let node = inner.nodes[i].name.clone();
        let bound = PodSpec {
            node_name: node.clone(),
            ..spec.clone()
        };
        match self.store.exempt().update(
            key,
            Some(pod.resource_version),
            Change::spec(Spec::Pod(bound)),
        ) {
            Ok(_) => {}
            Err(StoreError::Conflict { .. }) => {
                // Someone touched the Pod between read and bind; try again.
                drop(inner);
                self.enqueue(key.clone());
                return ScheduleOutcome::Unschedulable { retry_after: 0 };
            }
            Err(_) => return ScheduleOutcome::Gone,
        }
        inner.nodes[i].add(Placed {
            key: key.clone(),
            labels: pod.labels.clone(),
            anti_affinity: spec.anti_affinity.clone(),
        });
        inner.placed.insert(key.clone(), i);
        inner.backoff.remove(key);
        inner.binds.push(now);
        ScheduleOutcome::Bound { node }
    }

    /// Bind timestamps in order, for throughput measurement.
    pub fn bind_times(&self) -> Vec<Micros> {
        self.inner.lock().binds.clone()
    }

    pub fn unschedulable_count(&self) -> u64 {
        self.inner.lock().unschedulable
    }

    /// Pods placed per node, in roster order.
    pub fn node_loads(&self) -> Vec<(String, usize)> {
        self.inner
            .lock()
            .nodes
            .iter()
            .map(|n| (n.name.clone(), n.pods.len()))
            .collect()
    }

    /// Realtime loop: serves the queue until `stop` is set.
    pub fn run(&self, stop: &AtomicBool) {
        let mut next_free = self.timer.now();
        while !stop.load(Ordering::Relaxed) {
            let now = self.timer.now();
            let start = now.max(next_free);
            match self.try_start(start) {
                Some(done_at) => {
                    // Deadline-based so sleep overshoot does not accumulate.
                    let now = self.timer.now();
                    if done_at > now {
                        std::thread::sleep(Duration::from_micros(done_at - now));
                    }
                    self.finish(self.timer.now());
                    next_free = done_at;
                }
                None => {
                    next_free = self.timer.now();
                    std::thread::sleep(Duration::from_micros(200));
                }
            }
        }
    }
}

/// Least-loaded feasible node, ties to the lowest index.
fn pick_node(nodes: &[NodeState], pod: &VersionedObject, spec: &PodSpec) -> Option<usize> {
    let mut best: Option<(usize, usize)> = None;
    for (i, n) in nodes.iter().enumerate() {
        if n.pods.len() >= n.capacity as usize {
            continue;
        }
        let check = spec.anti_affinity.is_some() || n.anti > 0;
        let conflict = check
            && n.pods.iter().any(|p| {
                p.key.namespace == pod.key.namespace
                    && (selectors_match(&spec.anti_affinity, &p.labels)
                        || selectors_match(&p.anti_affinity, &pod.labels))
            });
        if conflict {
            continue;
        }
        if best.is_none_or(|(_, load)| n.pods.len() < load) {
            best = Some((i, n.pods.len()));
        }
    }
    best.map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::SimClock;
    use crate::model::NewObject;
    use crate::timer::EventQueue;

    fn setup(nodes: usize, capacity: u32) -> (Arc<SimClock>, Arc<ObjectStore>, Arc<Scheduler>) {
        let clock = Arc::new(SimClock::new());
        let store = Arc::new(ObjectStore::new(
            "super",
            clock.clone(),
            crate::store::StoreConfig::default(),
        ));
        let timer = Arc::new(EventQueue::new(clock.clone()));
        let roster: Vec<_> = (0..nodes).map(|i| (format!("n{i}"), capacity)).collect();
        let s = Scheduler::new(store.clone(), timer, SchedulerConfig::default(), &roster);
        (clock, store, s)
    }

    fn anti_pod(name: &str, app: &str) -> NewObject {
        let spec = PodSpec {
            anti_affinity: Some([LabelSelector::new("app", app)].into_iter().collect()),
            ..PodSpec::default()
        };
        NewObject::pod("ns", name, spec).with_label("app", app)
    }

    #[test]
    fn single_pod_bound_after_one_service_time() {
        let (clock, store, s) = setup(1, 10);
        let p = store
            .create(NewObject::pod("ns", "p", PodSpec::default()))
            .unwrap();
        s.enqueue(p.key.clone());
        let done = s.try_start(0).unwrap();
        assert_eq!(done, 2_500);
        assert!(s.try_start(0).is_none());
        clock.advance_to(done);
        assert_eq!(s.finish(done), ScheduleOutcome::Bound { node: "n0".into() });
        assert_eq!(
            store.get(&p.key).unwrap().pod_spec().unwrap().node_name,
            "n0"
        );
    }

    #[test]
    fn anti_affine_pair_lands_on_distinct_nodes() {
        for order in [["a", "b"], ["b", "a"]] {
            let (_clock, store, s) = setup(2, 10);
            for name in order {
                let p = store.create(anti_pod(name, "web")).unwrap();
                s.enqueue(p.key);
                s.try_start(0).unwrap();
                s.finish(0);
            }
            let a = store
                .get(&ObjectKey::namespaced(crate::model::Kind::Pod, "ns", "a"))
                .unwrap();
            let b = store
                .get(&ObjectKey::namespaced(crate::model::Kind::Pod, "ns", "b"))
                .unwrap();
            assert_ne!(
                a.pod_spec().unwrap().node_name,
                b.pod_spec().unwrap().node_name
            );
        }
    }

    #[test]
    fn unschedulable_backs_off() {
        let (_clock, store, s) = setup(1, 10);
        for name in ["a", "b"] {
            let p = store.create(anti_pod(name, "web")).unwrap();
            s.enqueue(p.key);
        }
        s.try_start(0).unwrap();
        assert!(matches!(s.finish(0), ScheduleOutcome::Bound { .. }));
        s.try_start(0).unwrap();
        assert_eq!(
            s.finish(0),
            ScheduleOutcome::Unschedulable {
                retry_after: 100_000
            }
        );
    }

    #[test]
    fn least_loaded_with_capacity() {
        let (_clock, store, s) = setup(3, 1);
        for i in 0..4 {
            let p = store
                .create(NewObject::pod("ns", &format!("p{i}"), PodSpec::default()))
                .unwrap();
            s.enqueue(p.key);
        }
        let mut nodes = Vec::new();
        while s.try_start(0).is_some() {
            nodes.push(s.finish(0));
        }
        assert_eq!(
            nodes,
            vec![
                ScheduleOutcome::Bound { node: "n0".into() },
                ScheduleOutcome::Bound { node: "n1".into() },
                ScheduleOutcome::Bound { node: "n2".into() },
                ScheduleOutcome::Unschedulable {
                    retry_after: 100_000
                },
            ]
        );
        s.forget(&ObjectKey::namespaced(crate::model::Kind::Pod, "ns", "p1"));
        assert_eq!(s.node_loads()[1].1, 0);
    }
}
