//! Dispatch proportionality and the queue's dedup/lifecycle contract,
//! checked against a single-threaded reference model.

#[path = "common/queue_model.rs"]
mod queue_model;

use std::collections::HashSet;
use std::sync::Arc;

use proptest::prelude::*;
use queue_model::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vcsim_core::workqueue::Policy;

#[test]
fn weights_1_2_4_over_7000_dispatches() {
    assert_eq!(
        saturated_counts(&[1, 2, 4], 7000, 7000),
        vec![1000, 2000, 4000]
    );
}

#[test]
fn interleaved_schedule_of_one_cycle() {
    // Round 0: everyone; round 1: weights >= 2; rounds 2-3: weight 4 only.
    let q = queue(Policy::WeightedRoundRobin, &[1, 2, 4]);
    for t in 0..3 {
        for k in 0..8 {
            q.enqueue(&tenant(t), (t, k)).unwrap();
        }
    }
    let order: Vec<usize> = (0..7)
        .map(|_| tenant_index(&q.try_dequeue().unwrap().tenant))
        .collect();
    assert_eq!(order, vec![0, 1, 2, 1, 2, 2, 2]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn saturated_dispatch_is_exactly_proportional(
        weights in prop::collection::vec(1u32..=8, 1..6),
        cycles in 1usize..40,
    ) {
        let total: u32 = weights.iter().sum();
        let n = cycles * total as usize;
        let per = (cycles as u32 * weights.iter().max().unwrap()) as u16;
        let counts = saturated_counts(&weights, per, n);
        let expected: Vec<u64> = weights.iter().map(|&w| cycles as u64 * u64::from(w)).collect();
        prop_assert_eq!(counts, expected);
    }
}

proptest! {
    // 10 cases x 10^4 operations per policy.
    #![proptest_config(ProptestConfig { cases: 10, max_shrink_iters: 200, ..ProptestConfig::default() })]

    #[test]
    fn wrr_matches_reference(
        weights in prop::collection::vec(1u32..=4, 1..5),
        ops in prop::collection::vec(op(4), 10_000),
    ) {
        let ops: Vec<Op> = ops
            .into_iter()
            .map(|o| match o {
                Op::Enqueue(t, k) => Op::Enqueue(t % weights.len(), k),
                Op::StrayDone(t, k) => Op::StrayDone(t % weights.len(), k),
                o => o,
            })
            .collect();
        run_ops(Policy::WeightedRoundRobin, &weights, &ops)?;
    }

    #[test]
    fn fifo_matches_reference(ops in prop::collection::vec(op(3), 10_000)) {
        run_ops(Policy::Fifo, &[1, 1, 1], &ops)?;
    }
}

/// One long seeded run of 10^5 operations.
#[test]
fn hundred_thousand_operations() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let ops: Vec<Op> = (0..100_000)
        .map(|_| match rng.gen_range(0..11) {
            0..=3 => Op::Enqueue(rng.gen_range(0..3), rng.gen_range(0..64)),
            4..=6 => Op::Dequeue,
            7..=9 => Op::Done(rng.gen()),
            _ => Op::StrayDone(rng.gen_range(0..3), rng.gen_range(0..64)),
        })
        .collect();
    run_ops(Policy::WeightedRoundRobin, &[1, 2, 4], &ops).unwrap();
}

/// Many workers: a key is never handed to two of them at once, and every
/// enqueued key is eventually processed.
#[test]
fn concurrent_workers_never_share_a_key() {
    use parking_lot::Mutex;
    use std::time::Duration;

    let q = Arc::new(queue(Policy::WeightedRoundRobin, &[1, 2, 3]));
    let in_flight = Arc::new(Mutex::new(HashSet::<Key>::new()));
    let processed = Arc::new(Mutex::new(HashSet::<Key>::new()));
    let producers: Vec<_> = (0..3)
        .map(|t| {
            let q = q.clone();
            std::thread::spawn(move || {
                for round in 0..5 {
                    for k in 0..200u16 {
                        q.enqueue(&tenant(t), (t, (k + round * 7) % 200)).unwrap();
                    }
                }
            })
        })
        .collect();
    let workers: Vec<_> = (0..6)
        .map(|_| {
            let (q, in_flight, processed) = (q.clone(), in_flight.clone(), processed.clone());
            std::thread::spawn(move || loop {
                match q.wait_dequeue(Duration::from_millis(20)) {
                    Ok(Some(d)) => {
                        assert!(in_flight.lock().insert(d.key), "key handed out twice");
                        std::thread::yield_now();
                        in_flight.lock().remove(&d.key);
                        processed.lock().insert(d.key);
                        q.done(&d.key).unwrap();
                    }
                    Ok(None) => {}
                    Err(_) => return,
                }
            })
        })
        .collect();
    for p in producers {
        p.join().unwrap();
    }
    while !(q.is_empty() && q.processing_len() == 0) {
        std::thread::sleep(Duration::from_millis(5));
    }
    q.shutdown();
    for w in workers {
        w.join().unwrap();
    }
    assert_eq!(processed.lock().len(), 600);
}
