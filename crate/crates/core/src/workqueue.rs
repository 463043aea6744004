//! Multi-tenant work queue with per-tenant sub-queues and weighted round-robin
//! dispatch.
//!
//! Keys follow the usual controller work-queue contract: a key is queued at
//! most once, is never handed to two workers at the same time, and a key
//! re-added while being processed is queued again when the worker calls
//! [`FairQueue::done`].
//!
//! Dispatch is interleaved weighted round-robin. A cycle has `max_weight`
//! rounds; in round `r` every tenant with `weight > r` and queued work gets one
//! dispatch, visited in registration order. Weight changes take effect at the
//! next cycle boundary; registrations take effect immediately.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::hash::Hash;
use std::sync::Arc;
use std::time::Duration;

use parking_lot::{Condvar, Mutex};

use crate::clock::{Clock, Micros};
use crate::model::TenantId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Policy {
    #[default]
    WeightedRoundRobin,
    /// Single global FIFO; the tenant is recorded but ignored for ordering.
    Fifo,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum QueueError {
    #[error("tenant `{0}` is not registered with the queue")]
    UnknownTenant(TenantId),
    #[error("tenant `{0}` is already registered with the queue")]
    DuplicateTenant(TenantId),
    #[error("weight must be at least 1")]
    InvalidWeight,
    #[error("key is not being processed")]
    NotProcessing,
    #[error("queue is shut down")]
    ShutDown,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dequeued<K> {
    pub tenant: TenantId,
    pub key: K,
    pub enqueued_at: Micros,
    pub dequeued_at: Micros,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QueueStats {
    pub enqueued: u64,
    pub deduplicated: u64,
    pub dispatched: BTreeMap<TenantId, u64>,
    pub discarded: u64,
    pub latency_sum: u128,
    pub latency_max: Micros,
}

impl QueueStats {
    pub fn mean_latency(&self) -> Option<f64> {
        let n: u64 = self.dispatched.values().sum();
        (n > 0).then(|| self.latency_sum as f64 / n as f64)
    }
}

struct Slot<K> {
    tenant: TenantId,
    weight: u32,
    next_weight: Option<u32>,
    queue: VecDeque<K>,
}

struct Entry {
    tenant: TenantId,
    enqueued_at: Micros,
}

struct Inner<K> {
    slots: Vec<Slot<K>>,
    index: HashMap<TenantId, usize>,
    fifo: VecDeque<K>,
    dirty: HashMap<K, Entry>,
    processing: HashSet<K>,
    queued: usize,
    round: u32,
    pos: usize,
    cycle_rounds: u32,
    shutdown: bool,
    stats: QueueStats,
}

pub struct FairQueue<K> {
    clock: Arc<dyn Clock>,
    policy: Policy,
    inner: Mutex<Inner<K>>,
    ready: Condvar,
}

impl<K: Clone + Eq + Hash> FairQueue<K> {
    pub fn new(clock: Arc<dyn Clock>, policy: Policy) -> Self {
        FairQueue {
            clock,
            policy,
            inner: Mutex::new(Inner {
                slots: Vec::new(),
                index: HashMap::new(),
                fifo: VecDeque::new(),
                dirty: HashMap::new(),
                processing: HashSet::new(),
                queued: 0,
                round: 0,
                pos: 0,
                cycle_rounds: 1,
                shutdown: false,
                stats: QueueStats::default(),
            }),
            ready: Condvar::new(),
        }
    }

    pub fn policy(&self) -> Policy {
        self.policy
    }

    pub fn register_tenant(&self, tenant: TenantId, weight: u32) -> Result<(), QueueError> {
        if weight == 0 {
            return Err(QueueError::InvalidWeight);
        }
        let mut inner = self.inner.lock();
        if inner.index.contains_key(&tenant) {
            return Err(QueueError::DuplicateTenant(tenant));
        }
        let i = inner.slots.len();
        inner.index.insert(tenant.clone(), i);
        inner.slots.push(Slot {
            tenant,
            weight,
            next_weight: None,
            queue: VecDeque::new(),
        });
        inner.cycle_rounds = inner.cycle_rounds.max(weight);
        Ok(())
    }

    /// Changes a tenant's weight from the next dispatch cycle on.
    pub fn set_weight(&self, tenant: &TenantId, weight: u32) -> Result<(), QueueError> {
        if weight == 0 {
            return Err(QueueError::InvalidWeight);
        }
        let mut inner = self.inner.lock();
        let i = *inner
            .index
            .get(tenant)
            .ok_or_else(|| QueueError::UnknownTenant(tenant.clone()))?;
        inner.slots[i].next_weight = Some(weight);
        Ok(())
    }

    pub fn weight(&self, tenant: &TenantId) -> Option<u32> {
        let inner = self.inner.lock();
        inner.index.get(tenant).map(|&i| inner.slots[i].weight)
    }

    /// Drops a tenant and every key it has queued. Returns how many were discarded.
    pub fn remove_tenant(&self, tenant: &TenantId) -> Result<usize, QueueError> {
        let mut inner = self.inner.lock();
        let i = inner
            .index
            .remove(tenant)
            .ok_or_else(|| QueueError::UnknownTenant(tenant.clone()))?;
        let inner = &mut *inner;
        let slot = inner.slots.remove(i);
        for (j, s) in inner.slots.iter().enumerate().skip(i) {
            inner.index.insert(s.tenant.clone(), j);
        }
        if inner.pos > i {
            inner.pos -= 1;
        }
        let mut discarded = slot.queue.len();
        inner.queued -= slot.queue.len();
        for k in &slot.queue {
            inner.dirty.remove(k);
        }
        if self.policy == Policy::Fifo {
            let before = inner.fifo.len();
            let dirty = &mut inner.dirty;
            inner.fifo.retain(|k| match dirty.get(k) {
                Some(e) if e.tenant == *tenant => {
                    dirty.remove(k);
                    false
                }
                _ => true,
            });
            let n = before - inner.fifo.len();
            inner.queued -= n;
            discarded += n;
        }
        // Keys re-added while in flight would be requeued on `done`; forget them.
        inner.dirty.retain(|_, e| e.tenant != *tenant);
        inner.stats.discarded += discarded as u64;
        tracing::info!(%tenant, discarded, "tenant removed from work queue");
        Ok(discarded)
    }

    /// Queues `key` for `tenant`. Returns false if the key was already queued.
    pub fn enqueue(&self, tenant: &TenantId, key: K) -> Result<bool, QueueError> {
        let now = self.clock.now_us();
        let mut inner = self.inner.lock();
        if inner.shutdown {
            return Err(QueueError::ShutDown);
        }
        let Some(&i) = inner.index.get(tenant) else {
            return Err(QueueError::UnknownTenant(tenant.clone()));
        };
        if inner.dirty.contains_key(&key) {
            inner.stats.deduplicated += 1;
            return Ok(false);
        }
        inner.stats.enqueued += 1;
        inner.dirty.insert(
            key.clone(),
            Entry {
                tenant: tenant.clone(),
                enqueued_at: now,
            },
        );
        if !inner.processing.contains(&key) {
            Self::push(&mut inner, self.policy, i, key);
            drop(inner);
            self.ready.notify_one();
        }
        Ok(true)
    }

    fn push(inner: &mut Inner<K>, policy: Policy, slot: usize, key: K) {
        match policy {
            Policy::WeightedRoundRobin => inner.slots[slot].queue.push_back(key),
            Policy::Fifo => inner.fifo.push_back(key),
        }
        inner.queued += 1;
    }

    /// Next key by the dispatch policy, or `None` if nothing is queued.
    pub fn try_dequeue(&self) -> Option<Dequeued<K>> {
        let mut inner = self.inner.lock();
        self.dequeue_locked(&mut inner)
    }

    /// Blocks up to `timeout` for work. Fails once the queue is shut down.
    pub fn wait_dequeue(&self, timeout: Duration) -> Result<Option<Dequeued<K>>, QueueError> {
        let mut inner = self.inner.lock();
        if inner.queued == 0 && !inner.shutdown {
            self.ready.wait_for(&mut inner, timeout);
        }
        if inner.shutdown {
            return Err(QueueError::ShutDown);
        }
        Ok(self.dequeue_locked(&mut inner))
    }

    fn dequeue_locked(&self, inner: &mut Inner<K>) -> Option<Dequeued<K>> {
        if inner.queued == 0 {
            return None;
        }
        let key = match self.policy {
            Policy::Fifo => inner.fifo.pop_front().expect("queued > 0"),
            Policy::WeightedRoundRobin => {
                let i = Self::next_slot(inner);
                inner.slots[i]
                    .queue
                    .pop_front()
                    .expect("eligible slot has work")
            }
        };
        inner.queued -= 1;
        let entry = inner.dirty.remove(&key).expect("queued keys are dirty");
        inner.processing.insert(key.clone());
        let now = self.clock.now_us();
        let latency = now.saturating_sub(entry.enqueued_at);
        inner.stats.latency_sum += u128::from(latency);
        inner.stats.latency_max = inner.stats.latency_max.max(latency);
        *inner
            .stats
            .dispatched
            .entry(entry.tenant.clone())
            .or_default() += 1;
        Some(Dequeued {
            tenant: entry.tenant,
            key,
            enqueued_at: entry.enqueued_at,
            dequeued_at: now,
        })
    }

    /// Advances the round-robin cursor to the next eligible slot.
    fn next_slot(inner: &mut Inner<K>) -> usize {
        loop {
            if inner.pos >= inner.slots.len() {
                inner.pos = 0;
                inner.round += 1;
                if inner.round >= inner.cycle_rounds {
                    inner.round = 0;
                    for s in &mut inner.slots {
                        if let Some(w) = s.next_weight.take() {
                            s.weight = w;
                        }
                    }
                    inner.cycle_rounds = inner.slots.iter().map(|s| s.weight).max().unwrap_or(1);
                }
                // Skip rounds nobody with work can use.
                let round = inner.round;
                if !inner
                    .slots
                    .iter()
                    .any(|s| s.weight > round && !s.queue.is_empty())
                {
                    inner.pos = inner.slots.len();
                    continue;
                }
            }
            let i = inner.pos;
            inner.pos += 1;
            let s = &inner.slots[i];
            if s.weight > inner.round && !s.queue.is_empty() {
                return i;
            }
        }
    }

    /// Marks `key` finished; requeues it if it was re-added meanwhile.
    pub fn done(&self, key: &K) -> Result<(), QueueError> {
        let mut inner = self.inner.lock();
        if !inner.processing.remove(key) {
            return Err(QueueError::NotProcessing);
        }
        let requeue = inner
            .dirty
            .get(key)
            .and_then(|e| inner.index.get(&e.tenant).copied());
        if let Some(i) = requeue {
            Self::push(&mut inner, self.policy, i, key.clone());
            drop(inner);
            self.ready.notify_one();
        }
        Ok(())
    }

    pub fn shutdown(&self) {
        self.inner.lock().shutdown = true;
        self.ready.notify_all();
    }

    pub fn len(&self) -> usize {
        self.inner.lock().queued
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn processing_len(&self) -> usize {
        self.inner.lock().processing.len()
    }

    pub fn is_processing(&self, key: &K) -> bool {
        self.inner.lock().processing.contains(key)
    }

    /// Queued keys per tenant, in tenant id order.
    pub fn pending_by_tenant(&self) -> BTreeMap<TenantId, usize> {
        let inner = self.inner.lock();
        match self.policy {
            Policy::WeightedRoundRobin => inner
                .slots
                .iter()
                .map(|s| (s.tenant.clone(), s.queue.len()))
                .collect(),
            Policy::Fifo => {
                let mut out: BTreeMap<TenantId, usize> =
                    inner.slots.iter().map(|s| (s.tenant.clone(), 0)).collect();
                for k in &inner.fifo {
                    *out.entry(inner.dirty[k].tenant.clone()).or_default() += 1;
                }
                out
            }
        }
    }

    /// Queued keys with their tenants: per tenant in registration order for
    /// WRR, global order for FIFO.
    pub fn pending_keys(&self) -> Vec<(TenantId, K)> {
        let inner = self.inner.lock();
        match self.policy {
            Policy::WeightedRoundRobin => inner
                .slots
                .iter()
                .flat_map(|s| s.queue.iter().map(|k| (s.tenant.clone(), k.clone())))
                .collect(),
            Policy::Fifo => inner
                .fifo
                .iter()
                .map(|k| (inner.dirty[k].tenant.clone(), k.clone()))
                .collect(),
        }
    }

    /// Keys handed out and not yet marked done.
    pub fn processing_keys(&self) -> Vec<K> {
        self.inner.lock().processing.iter().cloned().collect()
    }

    pub fn stats(&self) -> QueueStats {
        self.inner.lock().stats.clone()
    }
}
