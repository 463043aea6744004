//! The super cluster's active parts: a sequential scheduler, mock node agents
//! that start sandboxes, and the node proxy that injects service routing rules
//! into each sandbox before its Pod may start.

mod kubelet;
mod routing;
mod scheduler;

use std::sync::Arc;

pub use kubelet::{NodeAgents, PodStart};
pub use routing::{GroupFn, GuestRuleTable, RouteError, RuleLatency, ServiceRouter, SyncRecord};
pub use scheduler::{ScheduleOutcome, Scheduler, SchedulerConfig};

use crate::clock::Micros;
use crate::informer::{Informer, InformerConfig};
use crate::model::{Kind, NewObject, NodeSpec, ObjectKey, Spec, VersionedObject};
use crate::store::{EventType, ObjectStore};
use crate::timer::Timer;

#[derive(Debug, Clone)]
pub struct SuperSimConfig {
    pub nodes: usize,
    pub node_capacity: u32,
    pub scheduler: SchedulerConfig,
    pub kubelet_ready_delay: Micros,
    pub rule_latency: RuleLatency,
    pub proxy_scan_per_pod: Micros,
    pub node_heartbeat_period: Micros,
    pub informer: InformerConfig,
    pub seed: u64,
}

impl Default for SuperSimConfig {
    fn default() -> Self {
        Self {
            nodes: 100,
            node_capacity: 500,
            scheduler: SchedulerConfig::default(),
            kubelet_ready_delay: 0,
            rule_latency: RuleLatency::Fixed(10_000),
            proxy_scan_per_pod: 10_000,
            node_heartbeat_period: 10_000_000,
            informer: InformerConfig::default(),
            seed: 0,
        }
    }
}

pub fn node_name(i: usize) -> String {
    format!("node-{i:03}")
}

pub struct SuperCluster {
    pub store: Arc<ObjectStore>,
    pub informer: Arc<Informer>,
    pub scheduler: Arc<Scheduler>,
    pub agents: Arc<NodeAgents>,
    pub router: Arc<ServiceRouter>,
    timer: Arc<dyn Timer>,
    config: SuperSimConfig,
}

impl SuperCluster {
    /// Registers the physical nodes in `store` and wires the components to a
    /// watch of it. Nothing runs until [`SuperCluster::start`].
    pub fn new(
        store: Arc<ObjectStore>,
        timer: Arc<dyn Timer>,
        config: SuperSimConfig,
        group_of: GroupFn,
    ) -> Self {
        let names: Vec<String> = (0..config.nodes).map(node_name).collect();
        for name in &names {
            let node = NewObject::new(
                ObjectKey::cluster(Kind::Node, name),
                Spec::Node(NodeSpec {
                    mirrors: String::new(),
                    capacity: config.node_capacity,
                }),
            );
            store.exempt().create(node).expect("fresh node");
        }
        let roster: Vec<_> = names
            .iter()
            .map(|n| (n.clone(), config.node_capacity))
            .collect();
        let router = Arc::new(ServiceRouter::new(
            group_of,
            config.rule_latency,
            config.proxy_scan_per_pod,
            config.seed ^ 0x5e57,
        ));
        let scheduler = Scheduler::new(
            store.clone(),
            timer.clone(),
            config.scheduler.clone(),
            &roster,
        );
        let agents = NodeAgents::new(
            store.clone(),
            timer.clone(),
            router.clone(),
            config.kubelet_ready_delay,
            names,
        );

        // Pods are stamped with their group's service generation on admission.
        let r = router.clone();
        store.set_admission_hook(Arc::new(move |obj: &mut NewObject| {
            if let Spec::Pod(p) = &mut obj.spec {
                p.service_epoch_at_admission = r.generation(&r.group_of(&obj.key.namespace));
            }
        }));

        let informer = Arc::new(Informer::new(
            "super-sim",
            store.clone(),
            &[Kind::Pod, Kind::Service, Kind::Endpoints],
            InformerConfig {
                seed: config.seed ^ 0x1f0,
                ..config.informer.clone()
            },
        ));
        let (s, a, r) = (scheduler.clone(), agents.clone(), router.clone());
        informer.add_handler(Arc::new(move |t: EventType, obj: &VersionedObject| match (
            obj.key.kind,
            t,
        ) {
            (Kind::Pod, EventType::Deleted) => {
                s.forget(&obj.key);
                a.on_pod_deleted(&obj.key);
            }
            (Kind::Pod, _) => {
                let bound = obj.pod_spec().is_some_and(|p| !p.node_name.is_empty());
                if bound {
                    s.observe_bound(obj);
                    a.on_pod(obj);
                } else {
                    s.enqueue(obj.key.clone());
                }
            }
            _ => {
                if let Some(group) = r.observe(t, obj) {
                    a.on_services_changed(&group);
                }
            }
        }));

        SuperCluster {
            store,
            informer,
            scheduler,
            agents,
            router,
            timer,
            config,
        }
    }

    pub fn config(&self) -> &SuperSimConfig {
        &self.config
    }

    /// Starts the watch and the periodic node heartbeats.
    pub fn start(&self) {
        self.informer.start();
        self.agents.heartbeat();
        schedule_heartbeats(
            self.timer.clone(),
            self.agents.clone(),
            self.config.node_heartbeat_period,
        );
    }
}

fn schedule_heartbeats(timer: Arc<dyn Timer>, agents: Arc<NodeAgents>, period: Micros) {
    if period == 0 {
        return;
    }
    let t = timer.clone();
    timer.schedule_after(
        period,
        Box::new(move || {
            agents.heartbeat();
            schedule_heartbeats(t, agents, period);
        }),
    );
}
