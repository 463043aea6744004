//! Deferred tasks: retries, kubelet and rule-injection delays, periodic loops.
//!
//! Components schedule work through [`Timer`] and never sleep themselves, so
//! the same code runs under the discrete-event engine ([`EventQueue`]) and in
//! realtime mode ([`ThreadTimer`]).

use std::cmp::Ordering as CmpOrdering;
use std::collections::BinaryHeap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use parking_lot::{Condvar, Mutex};

use crate::clock::{Clock, Micros, SimClock, WallClock};

pub type Task = Box<dyn FnOnce() + Send>;

pub trait Timer: Send + Sync {
    fn now(&self) -> Micros;

    /// Runs `task` at `at`, or as soon as possible if `at` is in the past.
    fn schedule_at(&self, at: Micros, task: Task);

    fn schedule_after(&self, delay: Micros, task: Task) {
        let at = self.now().saturating_add(delay);
        self.schedule_at(at, task);
    }
}

struct Entry {
    at: Micros,
    seq: u64,
    task: Task,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<CmpOrdering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    // Reversed so the std max-heap pops the earliest (time, seq) first.
    fn cmp(&self, other: &Self) -> CmpOrdering {
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

/// Pending tasks of the discrete-event engine, ordered by time then by
/// scheduling order. The engine owns the clock and pops tasks itself.
pub struct EventQueue {
    clock: Arc<SimClock>,
    heap: Mutex<BinaryHeap<Entry>>,
    seq: AtomicU64,
}

impl EventQueue {
    pub fn new(clock: Arc<SimClock>) -> Self {
        EventQueue {
            clock,
            heap: Mutex::new(BinaryHeap::new()),
            seq: AtomicU64::new(0),
        }
    }

    pub fn next_time(&self) -> Option<Micros> {
        self.heap.lock().peek().map(|e| e.at)
    }

    /// Pops the earliest task if it is due at or before `now`.
    pub fn pop_due(&self, now: Micros) -> Option<Task> {
        let mut heap = self.heap.lock();
        if heap.peek().is_some_and(|e| e.at <= now) {
            heap.pop().map(|e| e.task)
        } else {
            None
        }
    }

    pub fn len(&self) -> usize {
        self.heap.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Timer for EventQueue {
    fn now(&self) -> Micros {
        self.clock.now_us()
    }

    fn schedule_at(&self, at: Micros, task: Task) {
        let at = at.max(self.clock.now_us());
        let seq = self.seq.fetch_add(1, Ordering::Relaxed);
        self.heap.lock().push(Entry { at, seq, task });
    }
}

struct Shared {
    heap: Mutex<BinaryHeap<Entry>>,
    wake: Condvar,
    stop: AtomicBool,
    seq: AtomicU64,
}

/// Wall-clock timer backed by one dispatch thread. Tasks run on that thread
/// in due order and should be short.
pub struct ThreadTimer {
    clock: Arc<WallClock>,
    shared: Arc<Shared>,
    handle: Mutex<Option<JoinHandle<()>>>,
}

impl ThreadTimer {
    pub fn start(clock: Arc<WallClock>) -> Arc<Self> {
        let shared = Arc::new(Shared {
            heap: Mutex::new(BinaryHeap::new()),
            wake: Condvar::new(),
            stop: AtomicBool::new(false),
            seq: AtomicU64::new(0),
        });
        let s = shared.clone();
        let c = clock.clone();
        let handle = std::thread::Builder::new()
            .name("timer".into())
            .spawn(move || Self::dispatch(&s, &c))
            .expect("spawn timer thread");
        Arc::new(ThreadTimer {
            clock,
            shared,
            handle: Mutex::new(Some(handle)),
        })
    }

    fn dispatch(shared: &Shared, clock: &WallClock) {
        loop {
            let task = {
                let mut heap = shared.heap.lock();
                loop {
                    if shared.stop.load(Ordering::Acquire) {
                        return;
                    }
                    let now = clock.now_us();
                    match heap.peek() {
                        Some(e) if e.at <= now => break heap.pop().expect("peeked").task,
                        Some(e) => {
                            let wait = Duration::from_micros(e.at - now);
                            shared.wake.wait_for(&mut heap, wait);
                        }
                        None => {
                            shared.wake.wait_for(&mut heap, Duration::from_millis(50));
                        }
                    }
                }
            };
            task();
        }
    }

    pub fn shutdown(&self) {
        self.shared.stop.store(true, Ordering::Release);
        self.shared.wake.notify_all();
        if let Some(h) = self.handle.lock().take() {
            let _ = h.join();
        }
    }
}

impl Timer for ThreadTimer {
    fn now(&self) -> Micros {
        self.clock.now_us()
    }

    fn schedule_at(&self, at: Micros, task: Task) {
        let seq = self.shared.seq.fetch_add(1, Ordering::Relaxed);
        self.shared.heap.lock().push(Entry { at, seq, task });
        self.shared.wake.notify_one();
    }
}

impl Drop for ThreadTimer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn event_queue_orders_by_time_then_insertion() {
        let clock = Arc::new(SimClock::new());
        let q = EventQueue::new(clock.clone());
        let log = Arc::new(Mutex::new(Vec::new()));
        for (at, tag) in [(20, "c"), (10, "a"), (10, "b")] {
            let l = log.clone();
            q.schedule_at(at, Box::new(move || l.lock().push(tag)));
        }
        assert!(q.pop_due(5).is_none());
        while let Some(t) = q.next_time() {
            clock.advance_to(t);
            q.pop_due(t).unwrap()();
        }
        assert_eq!(*log.lock(), vec!["a", "b", "c"]);
    }

    #[test]
    fn thread_timer_runs_tasks_in_order() {
        let timer = ThreadTimer::start(Arc::new(WallClock::new()));
        let (tx, rx) = crossbeam_channel::unbounded();
        for (delay, tag) in [(20_000, 2), (5_000, 1)] {
            let tx = tx.clone();
            timer.schedule_after(delay, Box::new(move || tx.send(tag).unwrap()));
        }
        let got: Vec<_> = (0..2)
            .map(|_| rx.recv_timeout(Duration::from_secs(2)).unwrap())
            .collect();
        assert_eq!(got, vec![1, 2]);
        timer.shutdown();
    }
}
