//! Scenario files: flat `key = value` lines, `#` starts a comment.
//!
//! Tenants come in groups. The short form
//!
//! ```text
//! tenants = 100
//! pods_per_tenant = 100
//! pattern = burst
//! ```
//!
//! declares one group; several groups use `group.<name> = <count> <burst|sequential> <pods> [weight=<w>]`.
//! Durations accept `us`, `ms` and `s` suffixes (`2.5ms`, `60s`).

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::clock::{Delay, Micros};

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoadPattern {
    /// All pods submitted at once.
    Burst,
    /// One pod at a time; the next is created when the previous is ready.
    Sequential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    Simulated,
    Realtime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TenantGroup {
    pub name: String,
    pub count: usize,
    pub pattern: LoadPattern,
    pub pods: usize,
    pub weight: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub groups: Vec<TenantGroup>,
    pub downward_workers: usize,
    pub upward_workers: usize,
    pub fair_queuing: bool,
    pub clock: ClockMode,
    pub seed: u64,
    pub baseline_mode: bool,
    pub nodes: usize,
    pub node_capacity: u32,
    pub scheduler_service_time: Micros,
    pub kubelet_ready_delay: Micros,
    pub rule_latency: Delay,
    pub services_per_tenant: usize,
    /// Unbound super Pods the syncer may have outstanding; 0 disables.
    pub admission_window: usize,
    pub informer_lag: Delay,
    pub reconcile_latency: Delay,
    pub drop_probability: f64,
    pub tenant_rate_limit: bool,
    pub scan_interval: Micros,
    /// Give up if the load has not completed by this (virtual or wall) time.
    pub deadline: Micros,
    pub sample_interval: Micros,
    /// Setup time before load starts, so tenant namespaces and services are
    /// synced first.
    pub warmup: Micros,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            name: "default".into(),
            groups: vec![TenantGroup {
                name: "t".into(),
                count: 1,
                pattern: LoadPattern::Burst,
                pods: 1,
                weight: 1,
            }],
            downward_workers: 20,
            upward_workers: 100,
            fair_queuing: true,
            clock: ClockMode::Simulated,
            seed: 1,
            baseline_mode: false,
            nodes: 100,
            node_capacity: 500,
            scheduler_service_time: 2_500,
            kubelet_ready_delay: 0,
            rule_latency: Delay::Fixed(10_000),
            services_per_tenant: 0,
            admission_window: 200,
            informer_lag: Delay::Uniform {
                min: 1_000,
                max: 5_000,
            },
            reconcile_latency: Delay::Uniform {
                min: 500,
                max: 1_500,
            },
            drop_probability: 0.0,
            tenant_rate_limit: true,
            scan_interval: 60_000_000,
            deadline: 600_000_000,
            sample_interval: 250_000,
            warmup: 1_000_000,
        }
    }
}

impl Scenario {
    /// `tenants` equal tenants, each submitting `pods_per_tenant` pods.
    pub fn uniform(tenants: usize, pods_per_tenant: usize, pattern: LoadPattern) -> Self {
        Scenario {
            groups: vec![TenantGroup {
                name: "t".into(),
                count: tenants,
                pattern,
                pods: pods_per_tenant,
                weight: 1,
            }],
            ..Scenario::default()
        }
    }

    /// `pods` spread over `tenants` as evenly as possible: the first
    /// `pods % tenants` tenants (group "a") get one pod more than the rest
    /// (group "b").
    pub fn spread(tenants: usize, pods: usize, pattern: LoadPattern) -> Self {
        let (base, extra) = (pods / tenants.max(1), pods % tenants.max(1));
        if extra == 0 {
            return Self::uniform(tenants, base, pattern);
        }
        let group = |name: &str, count, pods| TenantGroup {
            name: name.into(),
            count,
            pattern,
            pods,
            weight: 1,
        };
        let mut groups = vec![group("a", extra, base + 1)];
        if tenants > extra {
            groups.push(group("b", tenants - extra, base));
        }
        Scenario {
            groups,
            ..Scenario::default()
        }
    }

    pub fn pods_total(&self) -> usize {
        self.groups.iter().map(|g| g.count * g.pods).sum()
    }

    pub fn tenant_count(&self) -> usize {
        self.groups.iter().map(|g| g.count).sum()
    }

    /// Tenant ids in creation order with their group.
    pub fn tenants(&self) -> Vec<(String, &TenantGroup)> {
        let mut out = Vec::new();
        for g in &self.groups {
            for i in 0..g.count {
                out.push((format!("{}{i:03}", g.name), g));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: &str| Err(ScenarioError::Invalid(m.to_string()));
        if self.groups.is_empty() || self.tenant_count() == 0 {
            return bad("no tenants");
        }
        if self.pods_total() == 0 {
            return bad("no pods");
        }
        for g in &self.groups {
            if g.weight == 0 {
                return bad("tenant weight must be at least 1");
            }
            if g.name.is_empty()
                || !g
                    .name
                    .bytes()
                    .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit())
                || !g.name.as_bytes()[0].is_ascii_lowercase()
            {
                return bad("group names must be lowercase alphanumeric starting with a letter");
            }
        }
        let mut names: Vec<_> = self.groups.iter().map(|g| g.name.as_str()).collect();
        names.sort_unstable();
        // "a" and "a1" would give tenants a100 and a1 + 00 colliding ids.
        for w in names.windows(2) {
            if w[1].starts_with(w[0]) {
                return bad("group names must not be prefixes of each other");
            }
        }
        if self.downward_workers == 0 || self.upward_workers == 0 {
            return bad("worker counts must be at least 1");
        }
        if self.nodes == 0 || self.node_capacity == 0 {
            return bad("need at least one node with capacity");
        }
        if !(0.0..=1.0).contains(&self.drop_probability) {
            return bad("drop_probability must be in [0, 1]");
        }
        if self.sample_interval == 0 {
            return bad("sample_interval must be positive");
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)?;
        let mut s: Scenario = text.parse()?;
        if s.name == "default" {
            if let Some(stem) = path.file_stem() {
                s.name = stem.to_string_lossy().into_owned();
            }
        }
        Ok(s)
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let v = value.trim();
        match key {
            "name" => self.name = v.to_string(),
            "downward_workers" => self.downward_workers = num(v)?,
            "upward_workers" => self.upward_workers = num(v)?,
            "fair_queuing" => self.fair_queuing = flag(v)?,
            "clock" => {
                self.clock = match v {
                    "simulated" => ClockMode::Simulated,
                    "realtime" => ClockMode::Realtime,
                    _ => return Err(format!("unknown clock `{v}`")),
                }
            }
            "seed" => self.seed = num(v)?,
            "baseline_mode" => self.baseline_mode = flag(v)?,
            "nodes" => self.nodes = num(v)?,
            "node_capacity" => self.node_capacity = num(v)?,
            "scheduler_service_time" => self.scheduler_service_time = parse_duration(v)?,
            "kubelet_ready_delay" => self.kubelet_ready_delay = parse_duration(v)?,
            "rule_latency" => self.rule_latency = parse_delay(v)?,
            "services_per_tenant" => self.services_per_tenant = num(v)?,
            "admission_window" => self.admission_window = num(v)?,
            "informer_lag" => self.informer_lag = parse_delay(v)?,
            "reconcile_latency" => self.reconcile_latency = parse_delay(v)?,
            "drop_probability" => self.drop_probability = num(v)?,
            "tenant_rate_limit" => self.tenant_rate_limit = flag(v)?,
            "scan_interval" => self.scan_interval = parse_duration(v)?,
            "deadline" => self.deadline = parse_duration(v)?,
            "sample_interval" => self.sample_interval = parse_duration(v)?,
            "warmup" => self.warmup = parse_duration(v)?,
            "tenants" => self.single_group()?.count = num(v)?,
            "pods_per_tenant" => self.single_group()?.pods = num(v)?,
            "weight" => self.single_group()?.weight = num(v)?,
            "pattern" => self.single_group()?.pattern = parse_pattern(v)?,
            _ => {
                if let Some(name) = key.strip_prefix("group.") {
                    return self.set_group(name, v);
                }
                return Err(format!("unknown key `{key}`"));
            }
        }
        Ok(())
    }

    fn single_group(&mut self) -> Result<&mut TenantGroup, String> {
        match self.groups.as_mut_slice() {
            [g] => Ok(g),
            _ => Err("short tenant keys need exactly one group".into()),
        }
    }

    fn set_group(&mut self, name: &str, v: &str) -> Result<(), String> {
        let parts: Vec<&str> = v.split_whitespace().collect();
        let [count, pattern, pods, rest @ ..] = parts.as_slice() else {
            return Err("expected `<count> <pattern> <pods> [weight=<w>]`".into());
        };
        let mut weight = 1;
        for r in rest {
            match r.strip_prefix("weight=") {
                Some(w) => weight = num(w)?,
                None => return Err(format!("unexpected `{r}`")),
            }
        }
        let group = TenantGroup {
            name: name.to_string(),
            count: num(count)?,
            pattern: parse_pattern(pattern)?,
            pods: num(pods)?,
            weight,
        };
        // The first explicit group replaces the implicit default one.
        if self.groups.len() == 1 && self.groups[0].name == "t" && name != "t" {
            self.groups.clear();
        }
        match self.groups.iter_mut().find(|g| g.name == name) {
            Some(g) => *g = group,
            None => self.groups.push(group),
        }
        Ok(())
    }
}

impl FromStr for Scenario {
    type Err = ScenarioError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut s = Scenario::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| ScenarioError::Parse { line: i + 1, msg };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err("expected `key = value`".into()))?;
            s.set(k.trim(), v).map_err(err)?;
        }
        s.validate()?;
        Ok(s)
    }
}

impl fmt::Display for Scenario {
    /// Writes the scenario back in file form.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "name = {}", self.name)?;
        for g in &self.groups {
            let p = match g.pattern {
                LoadPattern::Burst => "burst",
                LoadPattern::Sequential => "sequential",
            };
            writeln!(
                f,
                "group.{} = {} {p} {} weight={}",
                g.name, g.count, g.pods, g.weight
            )?;
        }
        let on = |b: bool| if b { "on" } else { "off" };
        writeln!(f, "downward_workers = {}", self.downward_workers)?;
        writeln!(f, "upward_workers = {}", self.upward_workers)?;
        writeln!(f, "fair_queuing = {}", on(self.fair_queuing))?;
        let clock = match self.clock {
            ClockMode::Simulated => "simulated",
            ClockMode::Realtime => "realtime",
        };
        writeln!(f, "clock = {clock}")?;
        writeln!(f, "seed = {}", self.seed)?;
        writeln!(f, "baseline_mode = {}", on(self.baseline_mode))?;
        writeln!(f, "nodes = {}", self.nodes)?;
        writeln!(f, "node_capacity = {}", self.node_capacity)?;
        writeln!(
            f,
            "scheduler_service_time = {}us",
            self.scheduler_service_time
        )?;
        writeln!(f, "kubelet_ready_delay = {}us", self.kubelet_ready_delay)?;
        writeln!(f, "rule_latency = {}", delay_text(&self.rule_latency))?;
        writeln!(f, "services_per_tenant = {}", self.services_per_tenant)?;
        writeln!(f, "admission_window = {}", self.admission_window)?;
        writeln!(f, "informer_lag = {}", delay_text(&self.informer_lag))?;
        writeln!(
            f,
            "reconcile_latency = {}",
            delay_text(&self.reconcile_latency)
        )?;
        writeln!(f, "drop_probability = {}", self.drop_probability)?;
        writeln!(f, "tenant_rate_limit = {}", on(self.tenant_rate_limit))?;
        writeln!(f, "scan_interval = {}us", self.scan_interval)?;
        writeln!(f, "deadline = {}us", self.deadline)?;
        writeln!(f, "sample_interval = {}us", self.sample_interval)?;
        writeln!(f, "warmup = {}us", self.warmup)
    }
}

fn delay_text(d: &Delay) -> String {
    match d {
        Delay::Fixed(v) => format!("{v}us"),
        Delay::Uniform { min, max } => format!("{min}us..{max}us"),
    }
}

fn num<T: FromStr>(v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("bad number `{v}`"))
}

fn flag(v: &str) -> Result<bool, String> {
    match v {
        "on" | "true" | "yes" | "1" => Ok(true),
        "off" | "false" | "no" | "0" => Ok(false),
        _ => Err(format!("expected on/off, got `{v}`")),
    }
}

fn parse_pattern(v: &str) -> Result<LoadPattern, String> {
    match v {
        "burst" => Ok(LoadPattern::Burst),
        "sequential" => Ok(LoadPattern::Sequential),
        _ => Err(format!("unknown pattern `{v}`")),
    }
}

/// `250us`, `2.5ms`, `60s`; a bare number is microseconds.
pub fn parse_duration(v: &str) -> Result<Micros, String> {
    let v = v.trim();
    let (n, scale) = if let Some(n) = v.strip_suffix("us") {
        (n, 1.0)
    } else if let Some(n) = v.strip_suffix("ms") {
        (n, 1e3)
    } else if let Some(n) = v.strip_suffix('s') {
        (n, 1e6)
    } else {
        (v, 1.0)
    };
    let x: f64 = n
        .trim()
        .parse()
        .map_err(|_| format!("bad duration `{v}`"))?;
    if !x.is_finite() || x < 0.0 {
        return Err(format!("bad duration `{v}`"));
    }
    Ok((x * scale).round() as Micros)
}

/// A duration, or `min..max` for a uniform distribution.
pub fn parse_delay(v: &str) -> Result<Delay, String> {
    match v.split_once("..") {
        Some((a, b)) => {
            let (min, max) = (parse_duration(a)?, parse_duration(b)?);
            if min > max {
                return Err(format!("empty range `{v}`"));
            }
            Ok(Delay::Uniform { min, max })
        }
        None => Ok(Delay::Fixed(parse_duration(v)?)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spread_keeps_total() {
        for (t, p) in [(100, 1250), (25, 1250), (3, 2), (7, 7)] {
            let s = Scenario::spread(t, p, LoadPattern::Burst);
            assert_eq!((s.tenant_count(), s.pods_total()), (t, p));
            s.validate().unwrap();
        }
    }

    #[test]
    fn durations() {
        assert_eq!(parse_duration("2.5ms"), Ok(2_500));
        assert_eq!(parse_duration("60s"), Ok(60_000_000));
        assert_eq!(parse_duration("7"), Ok(7));
        assert!(parse_duration("-1s").is_err());
        assert_eq!(
            parse_delay("1ms..5ms"),
            Ok(Delay::Uniform {
                min: 1_000,
                max: 5_000
            })
        );
        assert!(parse_delay("5ms..1ms").is_err());
    }

    #[test]
    fn short_form() {
        let s: Scenario = "tenants = 100\npods_per_tenant = 100 # burst\nfair_queuing = off\n"
            .parse()
            .unwrap();
        assert_eq!(s.pods_total(), 10_000);
        assert!(!s.fair_queuing);
        assert_eq!(s.tenants()[7].0, "t007");
    }

    #[test]
    fn groups() {
        let text = "group.greedy = 10 burst 900\ngroup.regular = 40 sequential 10 weight=2\n";
        let s: Scenario = text.parse().unwrap();
        assert_eq!(s.groups.len(), 2);
        assert_eq!(s.pods_total(), 9_400);
        assert_eq!(s.tenant_count(), 50);
        assert_eq!(s.groups[1].weight, 2);
    }

    #[test]
    fn display_round_trips() {
        let mut s: Scenario =
            "group.greedy = 2 burst 9\ngroup.regular = 3 sequential 1\nrule_latency = 1ms..2ms\n"
                .parse()
                .unwrap();
        s.name = "x".into();
        let back: Scenario = s.to_string().parse().unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn rejects_bad_input() {
        assert!("tenants".parse::<Scenario>().is_err());
        assert!("bogus = 1".parse::<Scenario>().is_err());
        assert!("weight = 0".parse::<Scenario>().is_err());
        assert!("group.a = 1 burst 1\ngroup.ab = 1 burst 1"
            .parse::<Scenario>()
            .is_err());
        assert!("pods_per_tenant = 0".parse::<Scenario>().is_err());
    }
}
