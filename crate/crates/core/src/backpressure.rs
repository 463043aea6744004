//! Bounded window of Pods that have been written to the super cluster but not
//! yet bound by its scheduler.
//!
//! Downward workers take a permit before dequeuing. A permit whose reconcile
//! creates a super-cluster Pod stays held by that Pod until the scheduler binds
//! it (or it is deleted, or its lease runs out); every other permit is returned
//! when the reconcile finishes. The backlog therefore stays in the syncer's
//! fair queue, where dispatch order is decided, instead of piling up in the
//! scheduler's FIFO.

use std::collections::BTreeMap;

use parking_lot::Mutex;

use crate::clock::Micros;
use crate::model::ObjectKey;

/// Proof of a reserved slot; must be handed back via `release` or `assign`.
#[derive(Debug)]
#[must_use]
pub struct Permit {
    _private: (),
}

#[derive(Debug, Default)]
struct Inner {
    reserved: usize,
    holders: BTreeMap<ObjectKey, Micros>,
    /// No holder was assigned before this; lets `expire` skip the scan.
    oldest: Option<Micros>,
}

#[derive(Debug)]
pub struct AdmissionWindow {
    capacity: Option<usize>,
    lease: Micros,
    inner: Mutex<Inner>,
}

impl AdmissionWindow {
    /// `capacity` of `None` disables the window.
    pub fn new(capacity: Option<usize>, lease: Micros) -> Self {
        AdmissionWindow {
            capacity,
            lease,
            inner: Mutex::new(Inner::default()),
        }
    }

    pub fn unbounded() -> Self {
        Self::new(None, Micros::MAX)
    }

    pub fn capacity(&self) -> Option<usize> {
        self.capacity
    }

    pub fn try_acquire(&self) -> Option<Permit> {
        let mut inner = self.inner.lock();
        if let Some(cap) = self.capacity {
            if inner.reserved + inner.holders.len() >= cap {
                return None;
            }
        }
        inner.reserved += 1;
        Some(Permit { _private: () })
    }

    pub fn release(&self, permit: Permit) {
        let _ = permit;
        let mut inner = self.inner.lock();
        inner.reserved -= 1;
    }

    /// Transfers the permit to the super-cluster Pod `key`.
    pub fn assign(&self, permit: Permit, key: ObjectKey, now: Micros) {
        let _ = permit;
        let mut inner = self.inner.lock();
        inner.reserved -= 1;
        if self.capacity.is_some() {
            inner.holders.insert(key, now);
            inner.oldest = Some(inner.oldest.map_or(now, |o| o.min(now)));
        }
    }

    /// Frees the slot held by `key`, if any.
    pub fn release_key(&self, key: &ObjectKey) -> bool {
        self.inner.lock().holders.remove(key).is_some()
    }

    /// Frees slots held longer than the lease. Returns how many were freed.
    pub fn expire(&self, now: Micros) -> usize {
        let mut inner = self.inner.lock();
        let lease = self.lease;
        match inner.oldest {
            Some(o) if now.saturating_sub(o) >= lease => {}
            _ => return 0,
        }
        let before = inner.holders.len();
        inner
            .holders
            .retain(|_, at| now.saturating_sub(*at) < lease);
        inner.oldest = inner.holders.values().copied().min();
        before - inner.holders.len()
    }

    pub fn in_use(&self) -> usize {
        let inner = self.inner.lock();
        inner.reserved + inner.holders.len()
    }

    pub fn available(&self) -> bool {
        match self.capacity {
            None => true,
            Some(cap) => self.in_use() < cap,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Kind;

    #[test]
    fn permits_are_bounded_and_transferable() {
        let w = AdmissionWindow::new(Some(2), 1_000);
        let a = w.try_acquire().unwrap();
        let b = w.try_acquire().unwrap();
        assert!(w.try_acquire().is_none());
        w.release(a);
        let key = ObjectKey::namespaced(Kind::Pod, "ns", "p");
        w.assign(b, key.clone(), 0);
        assert_eq!(w.in_use(), 1);
        let c = w.try_acquire().unwrap();
        assert!(w.try_acquire().is_none());
        assert!(w.release_key(&key));
        assert!(!w.release_key(&key));
        w.release(c);
        assert_eq!(w.in_use(), 0);
    }

    #[test]
    fn leases_expire() {
        let w = AdmissionWindow::new(Some(1), 1_000);
        let p = w.try_acquire().unwrap();
        w.assign(p, ObjectKey::namespaced(Kind::Pod, "ns", "p"), 0);
        assert_eq!(w.expire(999), 0);
        assert_eq!(w.expire(1_000), 1);
        assert!(w.available());
    }

    #[test]
    fn unbounded_never_blocks() {
        let w = AdmissionWindow::unbounded();
        let permits: Vec<_> = (0..1000).map(|_| w.try_acquire().unwrap()).collect();
        for p in permits {
            w.assign(p, ObjectKey::namespaced(Kind::Pod, "ns", "p"), 0);
        }
        assert_eq!(w.in_use(), 0);
    }
}
