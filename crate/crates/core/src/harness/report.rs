//! Run results: flat tables that serialize the same way to JSON (one
//! document) and CSV (one file per table).

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::clock::Micros;
use crate::model::TenantId;

use super::scenario::{ClockMode, Scenario};
use super::trace::{Phase, PhaseTrace};

/// Histogram bucket width (2 s) and count of regular buckets; one overflow
/// bucket follows.
pub const BUCKET_WIDTH: Micros = 2_000_000;
pub const BUCKETS: usize = 5;

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{0} has no rows")]
    Empty(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenario: String,
    pub seed: u64,
    pub clock: ClockMode,
    pub baseline_mode: bool,
    pub fair_queuing: bool,
    pub tenants: usize,
    pub downward_workers: usize,
    pub upward_workers: usize,
    pub pods_total: usize,
    pub pods_created: usize,
    pub pods_ready: usize,
    pub makespan_us: Micros,
    pub throughput_pods_per_s: f64,
    /// Binding rate over the middle 80% of binds.
    pub scheduler_throughput: f64,
    pub latency_mean_us: f64,
    pub latency_p50_us: Micros,
    pub latency_p90_us: Micros,
    pub latency_p99_us: Micros,
    pub latency_max_us: Micros,
    /// (DWS-Queue + UWS-Queue) / end-to-end, over the means.
    pub queue_share: f64,
    pub audit_writes: u64,
    pub audit_violations: u64,
    pub audit_foreign: u64,
    pub informer_relists: u64,
    pub notifications_dropped: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRow {
    pub phase: String,
    pub mean_us: f64,
    pub p99_us: Micros,
    pub share: f64,
}

/// Pod counts per 2 s bucket: `[0,2) [2,4) [4,6) [6,8) [8,10) [10,inf)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub phase: String,
    pub b0_2: u64,
    pub b2_4: u64,
    pub b4_6: u64,
    pub b6_8: u64,
    pub b8_10: u64,
    pub b10_inf: u64,
}

impl HistogramRow {
    fn new(phase: &str, counts: [u64; BUCKETS + 1]) -> Self {
        let [b0_2, b2_4, b4_6, b6_8, b8_10, b10_inf] = counts;
        HistogramRow {
            phase: phase.to_string(),
            b0_2,
            b2_4,
            b4_6,
            b6_8,
            b8_10,
            b10_inf,
        }
    }

    pub fn counts(&self) -> [u64; BUCKETS + 1] {
        [
            self.b0_2,
            self.b2_4,
            self.b4_6,
            self.b6_8,
            self.b8_10,
            self.b10_inf,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TenantRow {
    pub tenant: String,
    pub group: String,
    pub weight: u32,
    pub pods: usize,
    pub mean_us: f64,
    pub max_us: Micros,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRow {
    pub tenant: String,
    pub pod: String,
    pub t_create_tenant: Micros,
    pub t_dws_enq: Micros,
    pub t_dws_deq: Micros,
    pub t_dws_done: Micros,
    pub t_super_ready: Micros,
    pub t_uws_enq: Micros,
    pub t_uws_deq: Micros,
    pub t_ready_tenant: Micros,
    pub total_us: Micros,
}

impl TraceRow {
    pub fn trace(&self) -> PhaseTrace {
        PhaseTrace {
            t_create_tenant: self.t_create_tenant,
            t_dws_enq: self.t_dws_enq,
            t_dws_deq: self.t_dws_deq,
            t_dws_done: self.t_dws_done,
            t_super_ready: self.t_super_ready,
            t_uws_enq: self.t_uws_enq,
            t_uws_deq: self.t_uws_deq,
            t_ready_tenant: self.t_ready_tenant,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepthSample {
    pub t_us: Micros,
    pub downward: usize,
    pub upward: usize,
    pub scheduler: usize,
    pub window_in_use: usize,
    pub super_objects: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub summary: Summary,
    pub phases: Vec<PhaseRow>,
    pub histogram: Vec<HistogramRow>,
    pub tenants: Vec<TenantRow>,
    pub traces: Vec<TraceRow>,
    pub queue_depth: Vec<DepthSample>,
}

/// Everything a run collects besides the traces.
#[derive(Debug, Clone, Default)]
pub struct RunStats {
    pub pods_created: usize,
    pub bind_times: Vec<Micros>,
    pub queue_depth: Vec<DepthSample>,
    pub audit_writes: u64,
    pub audit_violations: u64,
    pub audit_foreign: u64,
    pub informer_relists: u64,
    pub notifications_dropped: u64,
}

/// Nearest-rank percentile of sorted data.
pub fn percentile(sorted: &[Micros], p: f64) -> Micros {
    if sorted.is_empty() {
        return 0;
    }
    let rank = (p * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn mean(xs: impl Iterator<Item = Micros>) -> f64 {
    let (n, s) = xs.fold((0u64, 0u128), |(n, s), x| (n + 1, s + u128::from(x)));
    if n == 0 {
        0.0
    } else {
        s as f64 / n as f64
    }
}

pub fn bucket_of(d: Micros) -> usize {
    ((d / BUCKET_WIDTH) as usize).min(BUCKETS)
}

/// Binding rate between the 10th and 90th percentile bind, i.e. while the
/// scheduler is saturated in a burst run.
pub fn saturated_rate(bind_times: &[Micros]) -> f64 {
    let mut t = bind_times.to_vec();
    t.sort_unstable();
    if t.len() < 10 {
        return 0.0;
    }
    let lo = t.len() / 10;
    let hi = t.len() - 1 - t.len() / 10;
    let span = t[hi] - t[lo];
    if span == 0 {
        return 0.0;
    }
    (hi - lo) as f64 / (span as f64 / 1e6)
}

impl Report {
    pub fn build(
        scenario: &Scenario,
        traces: Vec<(TenantId, String, PhaseTrace)>,
        stats: RunStats,
    ) -> Report {
        let mut totals: Vec<Micros> = traces.iter().map(|(_, _, t)| t.total()).collect();
        totals.sort_unstable();
        let mean_total = mean(totals.iter().copied());

        let phases: Vec<PhaseRow> = Phase::ALL
            .iter()
            .map(|&p| {
                let mut v: Vec<Micros> = traces.iter().map(|(_, _, t)| t.phase(p)).collect();
                v.sort_unstable();
                let m = mean(v.iter().copied());
                PhaseRow {
                    phase: p.label().to_string(),
                    mean_us: m,
                    p99_us: percentile(&v, 0.99),
                    share: if mean_total > 0.0 {
                        m / mean_total
                    } else {
                        0.0
                    },
                }
            })
            .collect();
        let queue_share = phases[0].share + phases[3].share;

        let mut histogram: Vec<HistogramRow> = Phase::ALL
            .iter()
            .map(|&p| {
                let mut c = [0u64; BUCKETS + 1];
                for (_, _, t) in &traces {
                    c[bucket_of(t.phase(p))] += 1;
                }
                HistogramRow::new(p.label(), c)
            })
            .collect();
        let mut c = [0u64; BUCKETS + 1];
        for t in &totals {
            c[bucket_of(*t)] += 1;
        }
        histogram.push(HistogramRow::new("Total", c));

        let groups: BTreeMap<String, (String, u32)> = scenario
            .tenants()
            .into_iter()
            .map(|(id, g)| (id, (g.name.clone(), g.weight)))
            .collect();
        let mut per_tenant: BTreeMap<String, Vec<Micros>> =
            groups.keys().map(|k| (k.clone(), Vec::new())).collect();
        for (t, _, tr) in &traces {
            per_tenant
                .entry(t.to_string())
                .or_default()
                .push(tr.total());
        }
        let tenants = per_tenant
            .into_iter()
            .map(|(tenant, v)| {
                let (group, weight) = groups.get(&tenant).cloned().unwrap_or_default();
                TenantRow {
                    group,
                    weight,
                    pods: v.len(),
                    mean_us: mean(v.iter().copied()),
                    max_us: v.iter().copied().max().unwrap_or(0),
                    tenant,
                }
            })
            .collect();

        let first = traces
            .iter()
            .map(|(_, _, t)| t.t_create_tenant)
            .min()
            .unwrap_or(0);
        let last = traces
            .iter()
            .map(|(_, _, t)| t.t_ready_tenant)
            .max()
            .unwrap_or(0);
        let makespan = last.saturating_sub(first);
        let throughput = if makespan > 0 {
            traces.len() as f64 / (makespan as f64 / 1e6)
        } else {
            0.0
        };

        let trace_rows = traces
            .iter()
            .map(|(t, pod, tr)| TraceRow {
                tenant: t.to_string(),
                pod: pod.clone(),
                t_create_tenant: tr.t_create_tenant,
                t_dws_enq: tr.t_dws_enq,
                t_dws_deq: tr.t_dws_deq,
                t_dws_done: tr.t_dws_done,
                t_super_ready: tr.t_super_ready,
                t_uws_enq: tr.t_uws_enq,
                t_uws_deq: tr.t_uws_deq,
                t_ready_tenant: tr.t_ready_tenant,
                total_us: tr.total(),
            })
            .collect();

        Report {
            summary: Summary {
                scenario: scenario.name.clone(),
                seed: scenario.seed,
                clock: scenario.clock,
                baseline_mode: scenario.baseline_mode,
                fair_queuing: scenario.fair_queuing,
                tenants: scenario.tenant_count(),
                downward_workers: scenario.downward_workers,
                upward_workers: scenario.upward_workers,
                pods_total: scenario.pods_total(),
                pods_created: stats.pods_created,
                pods_ready: traces.len(),
                makespan_us: makespan,
                throughput_pods_per_s: throughput,
                scheduler_throughput: saturated_rate(&stats.bind_times),
                latency_mean_us: mean_total,
                latency_p50_us: percentile(&totals, 0.50),
                latency_p90_us: percentile(&totals, 0.90),
                latency_p99_us: percentile(&totals, 0.99),
                latency_max_us: totals.last().copied().unwrap_or(0),
                queue_share,
                audit_writes: stats.audit_writes,
                audit_violations: stats.audit_violations,
                audit_foreign: stats.audit_foreign,
                informer_relists: stats.informer_relists,
                notifications_dropped: stats.notifications_dropped,
            },
            phases,
            histogram,
            tenants,
            traces: trace_rows,
            queue_depth: stats.queue_depth,
        }
    }

    pub fn phase(&self, p: Phase) -> &PhaseRow {
        &self.phases[Phase::ALL.iter().position(|q| *q == p).unwrap_or(0)]
    }

    pub fn to_json(&self) -> Result<String, ReportError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, ReportError> {
        Ok(serde_json::from_str(text)?)
    }

    /// Writes `report.json`, or one CSV per table, into `dir`.
    pub fn emit(&self, dir: &Path, format: Format) -> Result<(), ReportError> {
        fs::create_dir_all(dir)?;
        match format {
            Format::Json => {
                let mut f = BufWriter::new(File::create(dir.join("report.json"))?);
                f.write_all(self.to_json()?.as_bytes())?;
                f.write_all(b"\n")?;
                f.flush()?;
            }
            Format::Csv => self.write_csv(dir)?,
        }
        Ok(())
    }

    pub fn write_csv(&self, dir: &Path) -> Result<(), ReportError> {
        fs::create_dir_all(dir)?;
        write_table(
            &dir.join("summary.csv"),
            std::slice::from_ref(&self.summary),
        )?;
        write_table(&dir.join("phases.csv"), &self.phases)?;
        write_table(&dir.join("histogram.csv"), &self.histogram)?;
        write_table(&dir.join("tenants.csv"), &self.tenants)?;
        write_table(&dir.join("traces.csv"), &self.traces)?;
        write_table(&dir.join("queue_depth.csv"), &self.queue_depth)?;
        Ok(())
    }

    pub fn read_csv(dir: &Path) -> Result<Self, ReportError> {
        let summary = read_table::<Summary>(&dir.join("summary.csv"))?
            .into_iter()
            .next()
            .ok_or(ReportError::Empty("summary.csv"))?;
        Ok(Report {
            summary,
            phases: read_table(&dir.join("phases.csv"))?,
            histogram: read_table(&dir.join("histogram.csv"))?,
            tenants: read_table(&dir.join("tenants.csv"))?,
            traces: read_table(&dir.join("traces.csv"))?,
            queue_depth: read_table(&dir.join("queue_depth.csv"))?,
        })
    }

    /// Text table: phases by 2 s buckets.
    pub fn histogram_table(&self) -> String {
        let mut out = format!(
            "{:<12} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
            "phase", "[0,2)", "[2,4)", "[4,6)", "[6,8)", "[8,10)", "[10,)"
        );
        for r in &self.histogram {
            let c = r.counts();
            out.push_str(&format!(
                "{:<12} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
                r.phase, c[0], c[1], c[2], c[3], c[4], c[5]
            ));
        }
        out
    }
}

fn write_table<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_table<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, ReportError> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<Result<Vec<T>, _>>()?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(create: Micros, total: Micros) -> PhaseTrace {
        let q = total / 2;
        PhaseTrace {
            t_create_tenant: create,
            t_dws_enq: create + 1,
            t_dws_deq: create + q,
            t_dws_done: create + q + 1,
            t_super_ready: create + q + 2,
            t_uws_enq: create + q + 2,
            t_uws_deq: create + total - 1,
            t_ready_tenant: create + total,
        }
    }

    #[test]
    fn percentiles_nearest_rank() {
        let v: Vec<Micros> = (1..=100).collect();
        assert_eq!(percentile(&v, 0.99), 99);
        assert_eq!(percentile(&v, 0.5), 50);
        assert_eq!(percentile(&v, 1.0), 100);
        assert_eq!(percentile(&[], 0.5), 0);
        assert_eq!(percentile(&[7], 0.01), 7);
    }

    #[test]
    fn buckets_conserve_pods() {
        let s = Scenario::uniform(2, 3, super::super::scenario::LoadPattern::Burst);
        let traces: Vec<_> = (0..6)
            .map(|i| {
                (
                    TenantId::new(format!("t{:03}", i % 2)),
                    format!("default/p{i}"),
                    trace(0, i * 2_500_000 + 10),
                )
            })
            .collect();
        let r = Report::build(&s, traces, RunStats::default());
        for row in &r.histogram {
            assert_eq!(row.counts().iter().sum::<u64>(), 6, "{}", row.phase);
        }
        let total = r.histogram.last().unwrap();
        assert_eq!(total.counts(), [1, 1, 1, 1, 0, 2]);
        assert_eq!(r.tenants.len(), 2);
        assert_eq!(r.summary.pods_ready, 6);
    }

    #[test]
    fn empty_report_writes_valid_files() {
        let s = Scenario::default();
        let r = Report::build(&s, Vec::new(), RunStats::default());
        let dir = tempfile::tempdir().unwrap();
        r.emit(dir.path(), Format::Json).unwrap();
        r.emit(dir.path(), Format::Csv).unwrap();
        let back = Report::read_csv(dir.path()).unwrap();
        assert_eq!(back, r);
        assert!(back.traces.is_empty());
        let json = fs::read_to_string(dir.path().join("report.json")).unwrap();
        assert_eq!(Report::from_json(&json).unwrap(), r);
    }

    #[test]
    fn saturated_rate_of_even_binds() {
        let binds: Vec<Micros> = (0..1000).map(|i| i * 2_500).collect();
        let r = saturated_rate(&binds);
        assert!((r - 400.0).abs() < 1.0, "{r}");
    }
}
