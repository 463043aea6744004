use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use vcsim_core::harness::experiments::{
    breakdown_scenario, convergence, fairness_scenario, routing, sweep_scenario, throughput_spread,
    ConvergenceConfig, Fairness, Mode, SweepRow,
};
use vcsim_core::harness::{run, ClockMode, Format, Report, Scenario};

#[derive(Parser)]
#[command(
    name = "vcsim",
    version,
    about = "Multi-tenant control plane sync simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Clone)]
struct Common {
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    clock: Option<Clock>,
    #[arg(long, global = true, value_enum, default_value_t = OutFormat::Json)]
    format: OutFormat,
    /// Directory for report files. Without it only a summary is printed.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    fair_queuing: Option<Switch>,
    #[arg(long, global = true)]
    downward_workers: Option<usize>,
    #[arg(long, global = true)]
    upward_workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Runs one scenario file.
    Run {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Greedy versus regular tenants, with and without fair queuing.
    Fairness,
    /// Syncer and baseline throughput over a grid of pod and tenant counts.
    Sweep {
        #[arg(long, value_delimiter = ',', default_values_t = [1250, 2500, 5000, 10000])]
        pods: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = [25, 50, 100])]
        tenants: Vec<usize>,
    },
    /// Five-phase latency breakdown of a 100 x 100 burst.
    Breakdown,
    /// Routing rule injection against pre-existing services.
    Routing {
        #[arg(long, default_value_t = 100)]
        services: usize,
    },
    /// Churn with dropped notifications and forced relists, then a scan.
    Convergence {
        #[arg(long, default_value_t = 0.2)]
        drop_probability: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Clock {
    Simulated,
    Realtime,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutFormat {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

impl Common {
    fn apply(&self, mut s: Scenario) -> Scenario {
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        if let Some(c) = self.clock {
            s.clock = match c {
                Clock::Simulated => ClockMode::Simulated,
                Clock::Realtime => ClockMode::Realtime,
            };
        }
        if let Some(fq) = self.fair_queuing {
            s.fair_queuing = matches!(fq, Switch::On);
        }
        if let Some(n) = self.downward_workers {
            s.downward_workers = n;
        }
        if let Some(n) = self.upward_workers {
            s.upward_workers = n;
        }
        s
    }

    fn seed(&self) -> u64 {
        self.seed.unwrap_or(1)
    }

    fn format(&self) -> Format {
        match self.format {
            OutFormat::Json => Format::Json,
            OutFormat::Csv => Format::Csv,
        }
    }

    fn emit(&self, report: &Report, sub: &str) -> Result<()> {
        if let Some(out) = &self.out {
            let dir = out.join(sub);
            report
                .emit(&dir, self.format())
                .with_context(|| format!("writing {}", dir.display()))?;
        }
        Ok(())
    }

    fn emit_rows<T: serde::Serialize>(&self, rows: &[T], stem: &str) -> Result<()> {
        let Some(out) = &self.out else { return Ok(()) };
        fs::create_dir_all(out)?;
        match self.format {
            OutFormat::Json => {
                let path = out.join(format!("{stem}.json"));
                fs::write(&path, serde_json::to_string_pretty(rows)? + "\n")
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            OutFormat::Csv => {
                let path = out.join(format!("{stem}.csv"));
                let mut w = csv::Writer::from_path(&path)
                    .with_context(|| format!("writing {}", path.display()))?;
                for r in rows {
                    w.serialize(r)?;
                }
                w.flush()?;
            }
        }
        Ok(())
    }
}

fn print_summary(r: &Report) {
    let s = &r.summary;
    println!(
        "{}: {} pods ready of {} in {:.3}s, {:.1} pods/s (scheduler {:.1}), latency mean {:.3}s p50 {:.3}s p99 {:.3}s",
        s.scenario,
        s.pods_ready,
        s.pods_total,
        s.makespan_us as f64 / 1e6,
        s.throughput_pods_per_s,
        s.scheduler_throughput,
        s.latency_mean_us / 1e6,
        s.latency_p50_us as f64 / 1e6,
        s.latency_p99_us as f64 / 1e6,
    );
}

fn cmd_run(c: &Common, path: &Path) -> Result<()> {
    let s = Scenario::load(path).with_context(|| format!("loading {}", path.display()))?;
    let r = run(c.apply(s))?;
    print_summary(&r);
    print!("{}", r.histogram_table());
    c.emit(&r, "")
}

fn cmd_fairness(c: &Common) -> Result<()> {
    let seed = c.seed();
    let mut runs = Vec::new();
    for fq in [true, false] {
        let mut s = c.apply(fairness_scenario(seed, fq));
        s.fair_queuing = fq;
        runs.push(run(s)?);
    }
    let fq_off = runs.pop().expect("two runs");
    let fq_on = runs.pop().expect("two runs");
    print_summary(&fq_on);
    print_summary(&fq_off);
    let f = Fairness { fq_on, fq_off };
    let v = f.verdict();
    println!(
        "fair queuing on: regular tenants max mean {:.3}s, greedy tenants min mean {:.3}s",
        v.regular_max_on_us / 1e6,
        v.greedy_min_on_us / 1e6
    );
    println!(
        "fair queuing off: {}/{} regular tenants slowed more than 2x",
        v.regular_delayed_off, v.regular_tenants
    );
    c.emit(&f.fq_on, "fq_on")?;
    c.emit(&f.fq_off, "fq_off")
}

fn cmd_sweep(c: &Common, pods: &[usize], tenants: &[usize]) -> Result<()> {
    let mut rows = Vec::new();
    for &p in pods {
        for &t in tenants {
            for mode in [Mode::Syncer, Mode::Baseline] {
                let s = c.apply(sweep_scenario(p, t, mode, c.seed(), ClockMode::Simulated));
                let r = run(s)?;
                let s = &r.summary;
                println!(
                    "{p:>6} pods {t:>4} tenants {:<8} {:>8.1} pods/s  mean {:.3}s  p99 {:.3}s",
                    format!("{mode:?}").to_lowercase(),
                    s.throughput_pods_per_s,
                    s.latency_mean_us / 1e6,
                    s.latency_p99_us as f64 / 1e6
                );
                rows.push(SweepRow {
                    pods: p,
                    tenants: t,
                    mode,
                    throughput_pods_per_s: s.throughput_pods_per_s,
                    scheduler_throughput: s.scheduler_throughput,
                    latency_mean_us: s.latency_mean_us,
                    latency_p99_us: s.latency_p99_us,
                    makespan_us: s.makespan_us,
                });
            }
        }
    }
    for &p in pods {
        println!(
            "{p} pods: syncer throughput spread across tenant counts {:.2}%",
            100.0 * throughput_spread(&rows, p)
        );
    }
    c.emit_rows(&rows, "sweep")
}

fn cmd_breakdown(c: &Common) -> Result<()> {
    let r = run(c.apply(breakdown_scenario(c.seed(), 20)))?;
    print_summary(&r);
    for p in &r.phases {
        println!(
            "{:<12} mean {:>10.3}ms  share {:>5.1}%",
            p.phase,
            p.mean_us / 1e3,
            100.0 * p.share
        );
    }
    print!("{}", r.histogram_table());
    c.emit(&r, "")
}

fn cmd_routing(c: &Common, services: usize) -> Result<()> {
    let r = routing(c.seed(), services)?;
    for s in &r.sandboxes {
        println!(
            "{:<24} rules {:>4} injection {:.3}s gated {} lookups {}/{}",
            s.pod,
            s.rules,
            s.injection_us as f64 / 1e6,
            s.gated,
            s.lookups_ok,
            r.services
        );
    }
    c.emit(&r.report, "")?;
    c.emit_rows(&r.sandboxes, "sandboxes")
}

fn cmd_convergence(c: &Common, drop_probability: f64) -> Result<()> {
    if !(0.0..1.0).contains(&drop_probability) {
        bail!("drop probability must be in [0, 1)");
    }
    let cfg = ConvergenceConfig {
        drop_probability,
        seed: c.seed.unwrap_or(ConvergenceConfig::default().seed),
        ..ConvergenceConfig::default()
    };
    let r = convergence(&cfg)?;
    println!(
        "dropped {} notifications, {} relists; first scan found {}, residual {}, second scan found {}",
        r.notifications_dropped,
        r.relists,
        r.first_scan_mismatches,
        r.residual.len(),
        r.second_scan_mismatches
    );
    for d in &r.residual {
        println!("  {d}");
    }
    // The residual list does not flatten into a table, so this is JSON only.
    if let Some(out) = &c.out {
        fs::create_dir_all(out)?;
        fs::write(
            out.join("convergence.json"),
            serde_json::to_string_pretty(&r)? + "\n",
        )?;
    }
    Ok(())
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let c = &cli.common;
    match &cli.command {
        Command::Run { scenario } => cmd_run(c, scenario),
        Command::Fairness => cmd_fairness(c),
        Command::Sweep { pods, tenants } => cmd_sweep(c, pods, tenants),
        Command::Breakdown => cmd_breakdown(c),
        Command::Routing { services } => cmd_routing(c, *services),
        Command::Convergence { drop_probability } => cmd_convergence(c, *drop_probability),
    }
}
