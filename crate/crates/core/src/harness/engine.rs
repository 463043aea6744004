//! Discrete-event driver. One thread, one virtual clock: timer tasks, informer
//! deliveries, syncer workers and the scheduler are all advanced from here, so
//! a (scenario, seed) pair always produces the same run.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use crate::clock::{Clock, Micros, SimClock};
use crate::informer::Informer;
use crate::syncer::{Direction, SyncError};
use crate::timer::{EventQueue, Timer};

use super::report::Report;
use super::scenario::{Scenario, ScenarioError};
use super::world::World;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Setup(#[from] SyncError),
    #[error("deadline of {deadline_us}us exceeded with {ready}/{total} pods ready")]
    Deadline {
        deadline_us: Micros,
        ready: usize,
        total: usize,
    },
    #[error("simulation stalled at {at_us}us with {ready}/{total} pods ready")]
    Stalled {
        at_us: Micros,
        ready: usize,
        total: usize,
    },
}

pub struct SimEngine {
    pub world: World,
    clock: Arc<SimClock>,
    events: Arc<EventQueue>,
    idle: [Arc<AtomicUsize>; 2],
    informers: Vec<Arc<Informer>>,
    informer_epoch: Option<u64>,
}

impl SimEngine {
    pub fn new(scenario: Scenario) -> Result<Self, RunError> {
        scenario.validate()?;
        let clock = Arc::new(SimClock::new());
        let events = Arc::new(EventQueue::new(clock.clone()));
        let idle = [
            Arc::new(AtomicUsize::new(scenario.downward_workers)),
            Arc::new(AtomicUsize::new(scenario.upward_workers)),
        ];
        let world = World::build(scenario, clock.clone(), events.clone())?;
        Ok(SimEngine {
            world,
            clock,
            events,
            idle,
            informers: Vec::new(),
            informer_epoch: None,
        })
    }

    /// Starts every component and schedules the load after the warmup.
    pub fn start(&mut self) -> Result<(), RunError> {
        self.world.start()?;
        self.world.load.start_at(self.world.scenario.warmup);
        Ok(())
    }

    pub fn now(&self) -> Micros {
        self.clock.now_us()
    }

    pub fn timer(&self) -> Arc<dyn Timer> {
        self.events.clone()
    }

    fn refresh_informers(&mut self) {
        let epoch = self.world.syncer.informer_epoch();
        if self.informer_epoch == Some(epoch) {
            return;
        }
        self.informer_epoch = Some(epoch);
        self.informers = vec![self.world.cluster.informer.clone()];
        if !self.world.scenario.baseline_mode {
            self.informers.extend(self.world.syncer.informers());
        }
    }

    /// Does everything due at the current instant. Returns true if anything
    /// happened.
    fn settle(&mut self) -> bool {
        let now = self.now();
        let mut any = false;
        loop {
            let mut progress = false;
            while let Some(task) = self.events.pop_due(now) {
                task();
                progress = true;
            }
            self.refresh_informers();
            for inf in &self.informers {
                inf.pump();
                if inf.deliver_due(now) > 0 {
                    progress = true;
                }
            }
            progress |= self.dispatch(Direction::Downward, now);
            progress |= self.dispatch(Direction::Upward, now);
            let sched = &self.world.cluster.scheduler;
            if let Some(done_at) = sched.try_start(now) {
                let (s, t) = (sched.clone(), self.timer());
                self.events
                    .schedule_at(done_at, Box::new(move || drop(s.finish(t.now()))));
                progress = true;
            }
            if !progress {
                break;
            }
            any = true;
        }
        any
    }

    fn dispatch(&self, direction: Direction, now: Micros) -> bool {
        let idle = &self.idle[direction as usize];
        let syncer = &self.world.syncer;
        let mut any = false;
        while idle.load(Ordering::Relaxed) > 0 {
            let Some(job) = syncer.begin(direction) else {
                break;
            };
            idle.fetch_sub(1, Ordering::Relaxed);
            let at = now + job.duration;
            let (s, i) = (syncer.clone(), idle.clone());
            self.events.schedule_at(
                at,
                Box::new(move || {
                    s.finish(job);
                    i.fetch_add(1, Ordering::Relaxed);
                }),
            );
            any = true;
        }
        any
    }

    fn next_time(&self) -> Option<Micros> {
        let timers = self.events.next_time();
        let informers = self.informers.iter().filter_map(|i| i.next_due()).min();
        match (timers, informers) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }

    /// Runs until `done` holds (checked after each instant), the clock would
    /// pass `deadline`, or nothing is left to do.
    pub fn run_while_not(
        &mut self,
        mut done: impl FnMut(&World) -> bool,
        deadline: Micros,
    ) -> Result<(), RunError> {
        loop {
            self.settle();
            self.world.syncer.window().expire(self.now());
            if done(&self.world) {
                return Ok(());
            }
            let Some(next) = self.next_time() else {
                return Err(self.stalled());
            };
            if next > deadline {
                self.clock.advance_to(deadline);
                return Err(RunError::Deadline {
                    deadline_us: deadline,
                    ready: self.world.tracer.completed_count(),
                    total: self.world.scenario.pods_total(),
                });
            }
            self.clock.advance_to(next);
        }
    }

    /// Processes everything scheduled up to and including `t`, then leaves
    /// the clock at `t`.
    pub fn run_until(&mut self, t: Micros) {
        loop {
            self.settle();
            self.world.syncer.window().expire(self.now());
            match self.next_time() {
                Some(next) if next <= t => self.clock.advance_to(next),
                _ => break,
            }
        }
        if t > self.now() {
            self.clock.advance_to(t);
            self.settle();
        }
    }

    fn stalled(&self) -> RunError {
        RunError::Stalled {
            at_us: self.now(),
            ready: self.world.tracer.completed_count(),
            total: self.world.scenario.pods_total(),
        }
    }

    /// Runs the scenario's load to completion and builds the report.
    pub fn run_to_completion(&mut self) -> Result<Report, RunError> {
        let deadline = self.world.scenario.deadline;
        self.run_while_not(World::is_complete, deadline)?;
        self.world.stop_sampling();
        Ok(self.world.report())
    }
}

/// Runs a scenario under the virtual clock.
pub fn run_simulated(scenario: Scenario) -> Result<Report, RunError> {
    let mut engine = SimEngine::new(scenario)?;
    engine.start()?;
    engine.run_to_completion()
}
