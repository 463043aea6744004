//! Runs a small burst under the simulated clock and prints the breakdown.

use vcsim_core::harness::{run, LoadPattern, Scenario};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let report = run(Scenario::uniform(10, 50, LoadPattern::Burst))?;
    let s = &report.summary;
    println!(
        "{} pods in {:.3}s, {:.1} pods/s, p99 {:.3}s",
        s.pods_ready,
        s.makespan_us as f64 / 1e6,
        s.throughput_pods_per_s,
        s.latency_p99_us as f64 / 1e6
    );
    for p in &report.phases {
        println!(
            "{:<12} {:>9.3}ms {:>5.1}%",
            p.phase,
            p.mean_us / 1e3,
            100.0 * p.share
        );
    }
    print!("{}", report.histogram_table());
    Ok(())
}
