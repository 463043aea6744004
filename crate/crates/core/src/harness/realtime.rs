//! Wall-clock driver: every component on its own threads, as it would run
//! for real. Results vary with the machine; use it for demos and for the
//! syncer-versus-baseline throughput comparison.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use crate::clock::{Clock, WallClock};
use crate::syncer::Direction;
use crate::timer::ThreadTimer;

use super::engine::RunError;
use super::report::Report;
use super::scenario::Scenario;
use super::world::{Create, World};

pub fn run_realtime(scenario: Scenario) -> Result<Report, RunError> {
    scenario.validate()?;
    let clock = Arc::new(WallClock::new());
    let timer = ThreadTimer::start(clock.clone());
    let world = Arc::new(World::build(scenario, clock.clone(), timer.clone())?);
    world.start()?;
    let stop = Arc::new(AtomicBool::new(false));
    let mut threads = Vec::new();
    let mut spawn = |name: String, f: Box<dyn FnOnce() + Send>| {
        threads.push(
            thread::Builder::new()
                .name(name)
                .spawn(f)
                .expect("spawn thread"),
        );
    };

    let baseline = world.scenario.baseline_mode;
    let mut informers = vec![world.cluster.informer.clone()];
    if !baseline {
        informers.extend(world.syncer.informers());
    }
    for (i, inf) in informers.into_iter().enumerate() {
        let stop = stop.clone();
        spawn(format!("informer-{i}"), Box::new(move || inf.run(&stop)));
    }
    {
        let (sched, stop) = (world.cluster.scheduler.clone(), stop.clone());
        spawn("scheduler".into(), Box::new(move || sched.run(&stop)));
    }
    if !baseline {
        let workers = [
            (Direction::Downward, world.scenario.downward_workers),
            (Direction::Upward, world.scenario.upward_workers),
        ];
        for (direction, n) in workers {
            for i in 0..n {
                let (s, stop) = (world.syncer.clone(), stop.clone());
                spawn(
                    format!("{direction:?}-{i}"),
                    Box::new(move || s.run_worker(direction, &stop)),
                );
            }
        }
        let (s, stop, c) = (world.syncer.clone(), stop.clone(), clock.clone());
        spawn(
            "window-lease".into(),
            Box::new(move || {
                while !stop.load(Ordering::Relaxed) {
                    s.window().expire(c.now_us());
                    thread::sleep(Duration::from_millis(50));
                }
            }),
        );
    }

    thread::sleep(Duration::from_micros(world.scenario.warmup));
    // One generator thread per tenant.
    for tenant in world.load.tenant_ids() {
        let (w, stop) = (world.clone(), stop.clone());
        spawn(
            format!("load-{tenant}"),
            Box::new(move || {
                while !stop.load(Ordering::Relaxed) {
                    match w.load.try_create(&tenant) {
                        Create::Done => return,
                        Create::Created { more } => {
                            if !more || !w.load.is_burst(&tenant) {
                                return;
                            }
                        }
                        Create::RetryAfter(d) => thread::sleep(Duration::from_micros(d)),
                    }
                }
            }),
        );
    }

    let started = Instant::now();
    let deadline = Duration::from_micros(world.scenario.deadline);
    let result = loop {
        if world.is_complete() {
            break Ok(());
        }
        if started.elapsed() > deadline {
            break Err(RunError::Deadline {
                deadline_us: world.scenario.deadline,
                ready: world.tracer.completed_count(),
                total: world.scenario.pods_total(),
            });
        }
        thread::sleep(Duration::from_millis(5));
    };
    world.stop_sampling();
    stop.store(true, Ordering::Relaxed);
    for q in [Direction::Downward, Direction::Upward] {
        world.syncer.queue(q).shutdown();
    }
    for t in threads {
        let _ = t.join();
    }
    timer.shutdown();
    result.map(|()| world.report())
}
