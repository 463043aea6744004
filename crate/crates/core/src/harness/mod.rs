//! Experiment surface: scenarios, the two drivers, phase tracing, reports and
//! the canned experiments.

mod engine;
pub mod experiments;
mod realtime;
mod report;
mod scenario;
mod trace;
mod world;

pub use engine::{run_simulated, RunError, SimEngine};
pub use realtime::run_realtime;
pub use report::{
    bucket_of, percentile, saturated_rate, DepthSample, Format, HistogramRow, PhaseRow, Report,
    ReportError, RunStats, Summary, TenantRow, TraceRow, BUCKETS, BUCKET_WIDTH,
};
pub use scenario::{
    parse_delay, parse_duration, ClockMode, LoadPattern, Scenario, ScenarioError, TenantGroup,
};
pub use trace::{Phase, PhaseTrace, Tracer};
pub use world::{Create, LoadGen, TenantHandle, World, TENANT_NAMESPACE};

/// Runs a scenario with the clock it asks for.
pub fn run(scenario: Scenario) -> Result<Report, RunError> {
    match scenario.clock {
        ClockMode::Simulated => run_simulated(scenario),
        ClockMode::Realtime => run_realtime(scenario),
    }
}
