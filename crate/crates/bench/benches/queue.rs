use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use vcsim_core::clock::SimClock;
use vcsim_core::model::TenantId;
use vcsim_core::workqueue::{FairQueue, Policy};

fn filled(policy: Policy, tenants: usize, per: usize) -> FairQueue<(usize, usize)> {
    let q = FairQueue::new(Arc::new(SimClock::new()), policy);
    let ids: Vec<TenantId> = (0..tenants)
        .map(|i| TenantId::new(format!("t{i}")))
        .collect();
    for (i, id) in ids.iter().enumerate() {
        q.register_tenant(id.clone(), 1 + (i % 4) as u32).unwrap();
    }
    for k in 0..per {
        for (i, id) in ids.iter().enumerate() {
            q.enqueue(id, (i, k)).unwrap();
        }
    }
    q
}

fn drain(c: &mut Criterion) {
    let mut g = c.benchmark_group("fair_queue_drain");
    for tenants in [10, 100, 1000] {
        let per = 10_000 / tenants;
        g.throughput(Throughput::Elements((tenants * per) as u64));
        for (name, policy) in [("wrr", Policy::WeightedRoundRobin), ("fifo", Policy::Fifo)] {
            g.bench_with_input(BenchmarkId::new(name, tenants), &tenants, |b, &t| {
                b.iter_batched(
                    || filled(policy, t, per),
                    |q| {
                        while let Some(d) = q.try_dequeue() {
                            q.done(black_box(&d.key)).unwrap();
                        }
                    },
                    criterion::BatchSize::LargeInput,
                )
            });
        }
    }
    g.finish();
}

fn dedup(c: &mut Criterion) {
    let q = filled(Policy::WeightedRoundRobin, 100, 10);
    let id = TenantId::new("t7");
    c.bench_function("fair_queue_enqueue_duplicate", |b| {
        b.iter(|| q.enqueue(&id, black_box((7, 3))).unwrap())
    });
}

criterion_group!(benches, drain, dedup);
criterion_main!(benches);
