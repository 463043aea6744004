//! Single-threaded reference for the fair queue, plus a driver that replays
//! an operation sequence against both and checks the queue's invariants.
#![allow(dead_code)]

use std::collections::{HashMap, HashSet, VecDeque};
use std::sync::Arc;

use proptest::prelude::*;
use vcsim_core::clock::SimClock;
use vcsim_core::model::TenantId;
use vcsim_core::workqueue::{FairQueue, Policy};

pub type Key = (usize, u16);

pub fn tenant(i: usize) -> TenantId {
    TenantId::new(format!("t{i}"))
}

pub fn queue(policy: Policy, weights: &[u32]) -> FairQueue<Key> {
    let q = FairQueue::new(Arc::new(SimClock::new()), policy);
    for (i, &w) in weights.iter().enumerate() {
        q.register_tenant(tenant(i), w).unwrap();
    }
    q
}

pub fn tenant_index(t: &TenantId) -> usize {
    t.as_str()[1..].parse().unwrap()
}

/// Fills every tenant with `per_tenant` keys and counts who the first `n`
/// dispatches go to.
pub fn saturated_counts(weights: &[u32], per_tenant: u16, n: usize) -> Vec<u64> {
    let q = queue(Policy::WeightedRoundRobin, weights);
    for t in 0..weights.len() {
        for k in 0..per_tenant {
            q.enqueue(&tenant(t), (t, k)).unwrap();
        }
    }
    let mut counts = vec![0; weights.len()];
    for _ in 0..n {
        let d = q.try_dequeue().expect("saturated");
        counts[tenant_index(&d.tenant)] += 1;
    }
    counts
}

pub struct Model {
    policy: Policy,
    weights: Vec<u32>,
    queues: Vec<VecDeque<Key>>,
    fifo: VecDeque<Key>,
    dirty: HashMap<Key, usize>,
    pub processing: HashSet<Key>,
    round: u32,
    pos: usize,
}

impl Model {
    pub fn new(policy: Policy, weights: &[u32]) -> Self {
        Model {
            policy,
            weights: weights.to_vec(),
            queues: vec![VecDeque::new(); weights.len()],
            fifo: VecDeque::new(),
            dirty: HashMap::new(),
            processing: HashSet::new(),
            round: 0,
            pos: 0,
        }
    }

    fn push(&mut self, t: usize, k: Key) {
        match self.policy {
            Policy::WeightedRoundRobin => self.queues[t].push_back(k),
            Policy::Fifo => self.fifo.push_back(k),
        }
    }

    fn queued(&self) -> usize {
        self.fifo.len() + self.queues.iter().map(VecDeque::len).sum::<usize>()
    }

    fn enqueue(&mut self, t: usize, k: Key) -> bool {
        if self.dirty.contains_key(&k) {
            return false;
        }
        self.dirty.insert(k, t);
        if !self.processing.contains(&k) {
            self.push(t, k);
        }
        true
    }

    fn dequeue(&mut self) -> Option<(usize, Key)> {
        if self.queued() == 0 {
            return None;
        }
        let k = match self.policy {
            Policy::Fifo => self.fifo.pop_front().unwrap(),
            Policy::WeightedRoundRobin => {
                let cycle = *self.weights.iter().max().unwrap();
                loop {
                    if self.pos >= self.weights.len() {
                        self.pos = 0;
                        self.round = (self.round + 1) % cycle;
                    }
                    let i = self.pos;
                    self.pos += 1;
                    if self.weights[i] > self.round && !self.queues[i].is_empty() {
                        break self.queues[i].pop_front().unwrap();
                    }
                }
            }
        };
        let t = self.dirty.remove(&k).unwrap();
        self.processing.insert(k);
        Some((t, k))
    }

    fn done(&mut self, k: Key) -> bool {
        if !self.processing.remove(&k) {
            return false;
        }
        if let Some(&t) = self.dirty.get(&k) {
            self.push(t, k);
        }
        true
    }
}

#[derive(Debug, Clone)]
pub enum Op {
    Enqueue(usize, u16),
    Dequeue,
    /// Finish the n-th (mod len) key in flight.
    Done(usize),
    /// `done` on a key that may not be in flight.
    StrayDone(usize, u16),
}

pub fn op(tenants: usize) -> impl Strategy<Value = Op> {
    prop_oneof![
        4 => (0..tenants, 0u16..24).prop_map(|(t, k)| Op::Enqueue(t, k)),
        3 => Just(Op::Dequeue),
        3 => any::<usize>().prop_map(Op::Done),
        1 => (0..tenants, 0u16..24).prop_map(|(t, k)| Op::StrayDone(t, k)),
    ]
}

pub fn check_invariants(q: &FairQueue<Key>) -> Result<(), TestCaseError> {
    let pending = q.pending_keys();
    let distinct: HashSet<Key> = pending.iter().map(|(_, k)| *k).collect();
    prop_assert_eq!(distinct.len(), pending.len(), "duplicate pending key");
    let processing: HashSet<Key> = q.processing_keys().into_iter().collect();
    prop_assert!(
        distinct.is_disjoint(&processing),
        "key both pending and in flight"
    );
    prop_assert_eq!(q.len(), pending.len());
    Ok(())
}

pub fn run_ops(policy: Policy, weights: &[u32], ops: &[Op]) -> Result<(), TestCaseError> {
    let q = queue(policy, weights);
    let mut m = Model::new(policy, weights);
    let mut in_flight: Vec<Key> = Vec::new();
    for op in ops {
        match *op {
            Op::Enqueue(t, k) => {
                let key = (t, k);
                prop_assert_eq!(q.enqueue(&tenant(t), key).unwrap(), m.enqueue(t, key));
            }
            Op::Dequeue => {
                let got = q.try_dequeue().map(|d| (tenant_index(&d.tenant), d.key));
                prop_assert_eq!(got, m.dequeue());
                if let Some((_, k)) = got {
                    in_flight.push(k);
                }
            }
            Op::Done(n) if !in_flight.is_empty() => {
                let k = in_flight.swap_remove(n % in_flight.len());
                prop_assert!(q.done(&k).is_ok());
                prop_assert!(m.done(k));
            }
            Op::Done(_) => {}
            Op::StrayDone(t, k) => {
                let key = (t, k);
                let expect = m.done(key);
                prop_assert_eq!(q.done(&key).is_ok(), expect);
                if expect {
                    in_flight.retain(|x| *x != key);
                }
            }
        }
        check_invariants(&q)?;
        prop_assert_eq!(q.len(), m.queued());
        prop_assert_eq!(q.processing_len(), m.processing.len());
    }
    Ok(())
}
