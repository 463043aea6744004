//! Per-pod timestamps along the creation path and the five phases derived
//! from them.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::clock::Micros;
use crate::model::{Kind, ObjectKey, TenantId};
use crate::syncer::{Direction, Outcome, ReconcileReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    DwsQueue,
    DwsProcess,
    SuperSched,
    UwsQueue,
    UwsProcess,
}

impl Phase {
    pub const ALL: [Phase; 5] = [
        Phase::DwsQueue,
        Phase::DwsProcess,
        Phase::SuperSched,
        Phase::UwsQueue,
        Phase::UwsProcess,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Phase::DwsQueue => "DWS-Queue",
            Phase::DwsProcess => "DWS-Process",
            Phase::SuperSched => "Super-Sched",
            Phase::UwsQueue => "UWS-Queue",
            Phase::UwsProcess => "UWS-Process",
        }
    }
}

/// Timestamps of one pod, in path order. In baseline mode the syncer stages
/// collapse onto the creation and ready times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseTrace {
    pub t_create_tenant: Micros,
    pub t_dws_enq: Micros,
    pub t_dws_deq: Micros,
    pub t_dws_done: Micros,
    pub t_super_ready: Micros,
    pub t_uws_enq: Micros,
    pub t_uws_deq: Micros,
    pub t_ready_tenant: Micros,
}

impl PhaseTrace {
    pub fn phase(&self, p: Phase) -> Micros {
        match p {
            Phase::DwsQueue => self.t_dws_deq - self.t_create_tenant,
            Phase::DwsProcess => self.t_dws_done - self.t_dws_deq,
            Phase::SuperSched => self.t_super_ready - self.t_dws_done,
            Phase::UwsQueue => self.t_uws_deq - self.t_super_ready,
            Phase::UwsProcess => self.t_ready_tenant - self.t_uws_deq,
        }
    }

    pub fn total(&self) -> Micros {
        self.t_ready_tenant - self.t_create_tenant
    }

    pub fn is_monotone(&self) -> bool {
        let t = [
            self.t_create_tenant,
            self.t_dws_enq,
            self.t_dws_deq,
            self.t_dws_done,
            self.t_super_ready,
            self.t_uws_enq,
            self.t_uws_deq,
            self.t_ready_tenant,
        ];
        t.windows(2).all(|w| w[0] <= w[1])
    }
}

#[derive(Debug, Default, Clone)]
struct Partial {
    create: Option<Micros>,
    dws: Option<(Micros, Micros, Micros)>,
    done: Option<PhaseTrace>,
}

/// Collects timestamps from the load generator and syncer reports.
#[derive(Debug, Default)]
pub struct Tracer {
    pods: Mutex<BTreeMap<(TenantId, String), Partial>>,
    created: AtomicUsize,
    completed: AtomicUsize,
}

impl Tracer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn created(&self, tenant: &TenantId, pod: &str, at: Micros) {
        self.pods
            .lock()
            .entry((tenant.clone(), pod.to_string()))
            .or_default()
            .create
            .get_or_insert_with(|| {
                self.created.fetch_add(1, Ordering::Relaxed);
                at
            });
    }

    /// Feeds a syncer report. Returns true if it completed a trace.
    pub fn observe(&self, r: &ReconcileReport) -> bool {
        if r.key.kind != Kind::Pod {
            return false;
        }
        let mut pods = self.pods.lock();
        // With real threads the syncer can see a pod before its creator
        // gets around to recording it, so the entry may not exist yet.
        let p = pods
            .entry((r.tenant.clone(), pod_name(&r.key)))
            .or_default();
        match (r.direction, r.outcome) {
            (Direction::Downward, Outcome::Created) if p.dws.is_none() => {
                p.dws = Some((r.enqueued_at, r.dequeued_at, r.finished_at));
                false
            }
            (Direction::Upward, Outcome::Updated) if r.made_ready && p.done.is_none() => {
                let (Some(create), Some((enq, deq, done))) = (p.create, p.dws) else {
                    return false;
                };
                let super_ready = r
                    .super_ready_at
                    .unwrap_or(r.dequeued_at)
                    .clamp(done, r.dequeued_at);
                p.done = Some(PhaseTrace {
                    t_create_tenant: create,
                    t_dws_enq: enq.max(create),
                    t_dws_deq: deq,
                    t_dws_done: done,
                    t_super_ready: super_ready,
                    t_uws_enq: r.enqueued_at.clamp(super_ready, r.dequeued_at),
                    t_uws_deq: r.dequeued_at,
                    t_ready_tenant: r.finished_at,
                });
                self.completed.fetch_add(1, Ordering::Relaxed);
                true
            }
            _ => false,
        }
    }

    /// Baseline mode: the pod went straight to the super cluster.
    pub fn direct_ready(&self, tenant: &TenantId, pod: &str, ready_at: Micros) -> bool {
        let mut pods = self.pods.lock();
        let Some(p) = pods.get_mut(&(tenant.clone(), pod.to_string())) else {
            return false;
        };
        let Some(c) = p.create else { return false };
        if p.done.is_some() {
            return false;
        }
        let r = ready_at.max(c);
        p.done = Some(PhaseTrace {
            t_create_tenant: c,
            t_dws_enq: c,
            t_dws_deq: c,
            t_dws_done: c,
            t_super_ready: r,
            t_uws_enq: r,
            t_uws_deq: r,
            t_ready_tenant: r,
        });
        self.completed.fetch_add(1, Ordering::Relaxed);
        true
    }

    pub fn created_count(&self) -> usize {
        self.created.load(Ordering::Relaxed)
    }

    pub fn completed_count(&self) -> usize {
        self.completed.load(Ordering::Relaxed)
    }

    /// Completed traces in (tenant, pod) order.
    pub fn traces(&self) -> Vec<(TenantId, String, PhaseTrace)> {
        self.pods
            .lock()
            .iter()
            .filter_map(|((t, n), p)| Some((t.clone(), n.clone(), p.done?)))
            .collect()
    }
}

fn pod_name(key: &ObjectKey) -> String {
    key.full_name()
}
