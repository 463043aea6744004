use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Weak};

use parking_lot::Mutex;

use crate::clock::Micros;
use crate::model::{Change, NodeStatus, ObjectKey, PodPhase, PodStatus, Status, VersionedObject};
use crate::store::ObjectStore;
use crate::timer::Timer;

use super::routing::ServiceRouter;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PodStart {
    pub gate_passed_at: Micros,
    pub running_at: Micros,
}

#[derive(Debug)]
struct PodState {
    admission_generation: u64,
    gate_passed_at: Option<Micros>,
    running_at: Option<Micros>,
}

#[derive(Debug, Default)]
struct Inner {
    pods: BTreeMap<ObjectKey, PodState>,
    silent_nodes: BTreeSet<String>,
}

/// Mock node agents for every physical node: create a sandbox for each bound
/// Pod, have the node proxy inject routing rules, and report the Pod Running
/// and ready once its init gate passes.
pub struct NodeAgents {
    store: Arc<ObjectStore>,
    timer: Arc<dyn Timer>,
    router: Arc<ServiceRouter>,
    ready_delay: Micros,
    nodes: Vec<String>,
    inner: Mutex<Inner>,
    me: Weak<NodeAgents>,
}

impl NodeAgents {
    pub fn new(
        store: Arc<ObjectStore>,
        timer: Arc<dyn Timer>,
        router: Arc<ServiceRouter>,
        ready_delay: Micros,
        nodes: Vec<String>,
    ) -> Arc<Self> {
        Arc::new_cyclic(|me| NodeAgents {
            store,
            timer,
            router,
            ready_delay,
            nodes,
            inner: Mutex::new(Inner::default()),
            me: me.clone(),
        })
    }

    /// Reacts to a Pod add/update seen by the node's watch.
    pub fn on_pod(&self, pod: &VersionedObject) {
        let Some(spec) = pod.pod_spec() else { return };
        if spec.node_name.is_empty() {
            return;
        }
        {
            let mut inner = self.inner.lock();
            if inner.pods.contains_key(&pod.key) {
                return;
            }
            let already = pod.status.pod_ready().then_some(0);
            inner.pods.insert(
                pod.key.clone(),
                PodState {
                    admission_generation: spec.service_epoch_at_admission,
                    gate_passed_at: already,
                    running_at: already,
                },
            );
            if already.is_some() {
                return;
            }
        }
        let group = self.router.group_of(&pod.key.namespace);
        self.router.attach(pod.key.clone(), group);
        self.start_sync(pod.key.clone());
    }

    pub fn on_pod_deleted(&self, key: &ObjectKey) {
        self.inner.lock().pods.remove(key);
        self.router.detach(key);
    }

    /// Resyncs every sandbox of a group whose services changed.
    pub fn on_services_changed(&self, group: &str) {
        for sb in self.router.sandboxes_in(group) {
            self.start_sync(sb);
        }
    }

    fn start_sync(&self, sandbox: ObjectKey) {
        let now = self.timer.now();
        let Some(cost) = self.router.begin_sync(&sandbox, now) else {
            return;
        };
        let Some(me) = self.me.upgrade() else { return };
        self.timer
            .schedule_after(cost, Box::new(move || me.sync_done(sandbox)));
    }

    fn sync_done(&self, sandbox: ObjectKey) {
        if self.router.complete_sync(&sandbox, self.timer.now()) {
            self.start_sync(sandbox.clone());
        }
        self.check_gate(&sandbox);
    }

    fn check_gate(&self, key: &ObjectKey) {
        let now = self.timer.now();
        {
            let mut inner = self.inner.lock();
            let Some(st) = inner.pods.get_mut(key) else {
                return;
            };
            if st.gate_passed_at.is_some() || !self.router.init_gate(key, st.admission_generation) {
                return;
            }
            st.gate_passed_at = Some(now);
        }
        let Some(me) = self.me.upgrade() else { return };
        let key = key.clone();
        self.timer
            .schedule_after(self.ready_delay, Box::new(move || me.mark_ready(key)));
    }

    fn mark_ready(&self, key: ObjectKey) {
        let now = self.timer.now();
        {
            let mut inner = self.inner.lock();
            let Some(st) = inner.pods.get_mut(&key) else {
                return;
            };
            st.running_at = Some(now);
        }
        let status = Status::Pod(PodStatus {
            phase: PodPhase::Running,
            ready: true,
            ready_at: Some(now),
        });
        if let Err(e) = self
            .store
            .exempt()
            .update(&key, None, Change::status(status))
        {
            tracing::debug!(pod = %key, error = %e, "ready update skipped");
        }
    }

    /// Gate and start times of every tracked Pod that has started.
    pub fn starts(&self) -> BTreeMap<ObjectKey, PodStart> {
        self.inner
            .lock()
            .pods
            .iter()
            .filter_map(|(k, s)| {
                Some((
                    k.clone(),
                    PodStart {
                        gate_passed_at: s.gate_passed_at?,
                        running_at: s.running_at?,
                    },
                ))
            })
            .collect()
    }

    pub fn running_count(&self) -> usize {
        self.inner
            .lock()
            .pods
            .values()
            .filter(|s| s.running_at.is_some())
            .count()
    }

    /// Stops (or resumes) heartbeats from one node.
    pub fn set_heartbeating(&self, node: &str, on: bool) {
        let mut inner = self.inner.lock();
        if on {
            inner.silent_nodes.remove(node);
        } else {
            inner.silent_nodes.insert(node.to_string());
        }
    }

    /// Writes a heartbeat for every live node. Returns how many were written.
    pub fn heartbeat(&self) -> usize {
        let now = self.timer.now();
        let silent = self.inner.lock().silent_nodes.clone();
        let mut n = 0;
        for name in self.nodes.iter().filter(|n| !silent.contains(*n)) {
            let key = ObjectKey::cluster(crate::model::Kind::Node, name);
            let status = Status::Node(NodeStatus {
                last_heartbeat: Some(now),
            });
            if self
                .store
                .exempt()
                .update(&key, None, Change::status(status))
                .is_ok()
            {
                n += 1;
            }
        }
        n
    }
}
