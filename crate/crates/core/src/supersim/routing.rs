use std::collections::BTreeMap;
use std::sync::Arc;

use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::clock::{Delay, Micros};
use crate::model::{Kind, ObjectKey, Spec, VersionedObject};
use crate::store::EventType;

/// Maps a super-cluster namespace to the group whose services a sandbox in
/// that namespace can reach (the owning tenant, or the namespace itself).
pub type GroupFn = Arc<dyn Fn(&str) -> String + Send + Sync>;

pub type RuleLatency = Delay;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RouteError {
    #[error("sandbox {0} does not exist")]
    SandboxGone(ObjectKey),
    #[error("no rule for {0}:{1}")]
    NoRule(String, u16),
    #[error("service {0}:{1} has no endpoints")]
    NoEndpoints(String, u16),
}

/// Routing rules installed in one sandbox's guest OS.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GuestRuleTable {
    pub rules: BTreeMap<(String, u16), Vec<String>>,
    /// Number of rule-set generations applied so far.
    pub rule_epoch: u64,
    /// Service generation of the group the current rules were built from.
    pub covered_generation: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyncRecord {
    pub started: Micros,
    pub finished: Micros,
    pub rules: usize,
    pub generation: u64,
}

#[derive(Debug, Default)]
struct Group {
    generation: u64,
    services: BTreeMap<(String, String), (String, Vec<u16>)>,
    endpoints: BTreeMap<(String, String), Vec<String>>,
}

impl Group {
    fn rules(&self) -> BTreeMap<(String, u16), Vec<String>> {
        let mut out = BTreeMap::new();
        for (k, (ip, ports)) in &self.services {
            let eps = self.endpoints.get(k).cloned().unwrap_or_default();
            for &port in ports {
                out.insert((ip.clone(), port), eps.clone());
            }
        }
        out
    }
}

struct InFlight {
    started: Micros,
    generation: u64,
    rules: BTreeMap<(String, u16), Vec<String>>,
}

struct Sandbox {
    group: String,
    table: GuestRuleTable,
    in_flight: Option<InFlight>,
    stale: bool,
    history: Vec<SyncRecord>,
}

struct Inner {
    groups: BTreeMap<String, Group>,
    sandboxes: BTreeMap<ObjectKey, Sandbox>,
    rng: ChaCha8Rng,
}

/// Service image per group plus the rule table of every sandbox: the
/// node-side proxy that pushes cluster-IP rules into guest sandboxes.
pub struct ServiceRouter {
    group_of: GroupFn,
    latency: RuleLatency,
    scan_cost_per_pod: Micros,
    inner: Mutex<Inner>,
}

impl ServiceRouter {
    pub fn new(
        group_of: GroupFn,
        latency: RuleLatency,
        scan_cost_per_pod: Micros,
        seed: u64,
    ) -> Self {
        ServiceRouter {
            group_of,
            latency,
            scan_cost_per_pod,
            inner: Mutex::new(Inner {
                groups: BTreeMap::new(),
                sandboxes: BTreeMap::new(),
                rng: ChaCha8Rng::seed_from_u64(seed),
            }),
        }
    }

    pub fn group_of(&self, namespace: &str) -> String {
        (self.group_of)(namespace)
    }

    /// Feeds a Service or Endpoints event. Returns the group whose service
    /// generation moved, if any.
    pub fn observe(&self, event_type: EventType, obj: &VersionedObject) -> Option<String> {
        if !matches!(obj.key.kind, Kind::Service | Kind::Endpoints) {
            return None;
        }
        let group = self.group_of(&obj.key.namespace);
        let inner = &mut *self.inner.lock();
        let g = inner.groups.entry(group.clone()).or_default();
        let id = (obj.key.namespace.clone(), obj.key.name.clone());
        let changed = match (&obj.spec, event_type) {
            (_, EventType::Deleted) if obj.key.kind == Kind::Service => {
                g.services.remove(&id).is_some()
            }
            (_, EventType::Deleted) => g.endpoints.remove(&id).is_some(),
            (Spec::Service(s), _) => {
                let v = (s.cluster_ip.clone(), s.ports.clone());
                g.services.insert(id, v.clone()) != Some(v)
            }
            (Spec::Endpoints(e), _) => {
                g.endpoints.insert(id, e.addresses.clone()) != Some(e.addresses.clone())
            }
            _ => false,
        };
        if changed {
            g.generation += 1;
            for sb in inner.sandboxes.values_mut().filter(|s| s.group == group) {
                if sb.in_flight.is_some() {
                    sb.stale = true;
                }
            }
            Some(group)
        } else {
            None
        }
    }

    pub fn generation(&self, group: &str) -> u64 {
        self.inner
            .lock()
            .groups
            .get(group)
            .map_or(0, |g| g.generation)
    }

    pub fn attach(&self, sandbox: ObjectKey, group: String) {
        self.inner
            .lock()
            .sandboxes
            .entry(sandbox)
            .or_insert(Sandbox {
                group,
                table: GuestRuleTable::default(),
                in_flight: None,
                stale: false,
                history: Vec::new(),
            });
    }

    pub fn detach(&self, sandbox: &ObjectKey) {
        self.inner.lock().sandboxes.remove(sandbox);
    }

    pub fn sandboxes_in(&self, group: &str) -> Vec<ObjectKey> {
        self.inner
            .lock()
            .sandboxes
            .iter()
            .filter(|(_, s)| s.group == group)
            .map(|(k, _)| k.clone())
            .collect()
    }

    /// Starts rebuilding a sandbox's rule table from the current service
    /// image. Returns how long the injection takes, or `None` if the sandbox
    /// is gone or a sync is already running (it will be redone afterwards).
    pub fn begin_sync(&self, sandbox: &ObjectKey, now: Micros) -> Option<Micros> {
        let inner = &mut *self.inner.lock();
        let sb = inner.sandboxes.get_mut(sandbox)?;
        if sb.in_flight.is_some() {
            sb.stale = true;
            return None;
        }
        let (generation, rules) = inner
            .groups
            .get(&sb.group)
            .map(|g| (g.generation, g.rules()))
            .unwrap_or_default();
        let cost: Micros = (0..rules.len())
            .map(|_| self.latency.sample(&mut inner.rng))
            .sum();
        sb.in_flight = Some(InFlight {
            started: now,
            generation,
            rules,
        });
        Some(cost)
    }

    /// Installs the rules prepared by `begin_sync`. Returns true if the
    /// service image changed meanwhile and another sync is needed.
    pub fn complete_sync(&self, sandbox: &ObjectKey, now: Micros) -> bool {
        let mut inner = self.inner.lock();
        let Some(sb) = inner.sandboxes.get_mut(sandbox) else {
            return false;
        };
        let Some(f) = sb.in_flight.take() else {
            return false;
        };
        sb.history.push(SyncRecord {
            started: f.started,
            finished: now,
            rules: f.rules.len(),
            generation: f.generation,
        });
        sb.table.rules = f.rules;
        sb.table.rule_epoch += 1;
        sb.table.covered_generation = f.generation;
        std::mem::take(&mut sb.stale)
    }

    /// True once the sandbox's rules cover the service generation the Pod
    /// was admitted under.
    pub fn init_gate(&self, sandbox: &ObjectKey, admission_generation: u64) -> bool {
        self.inner.lock().sandboxes.get(sandbox).is_some_and(|s| {
            s.table.rule_epoch > 0 && s.table.covered_generation >= admission_generation
        })
    }

    pub fn table(&self, sandbox: &ObjectKey) -> Option<GuestRuleTable> {
        self.inner
            .lock()
            .sandboxes
            .get(sandbox)
            .map(|s| s.table.clone())
    }

    pub fn sync_history(&self, sandbox: &ObjectKey) -> Vec<SyncRecord> {
        self.inner
            .lock()
            .sandboxes
            .get(sandbox)
            .map(|s| s.history.clone())
            .unwrap_or_default()
    }

    /// Picks one endpoint of the service behind `cluster_ip:port`, uniformly.
    pub fn route_lookup(
        &self,
        sandbox: &ObjectKey,
        cluster_ip: &str,
        port: u16,
    ) -> Result<String, RouteError> {
        let inner = &mut *self.inner.lock();
        let sb = inner
            .sandboxes
            .get(sandbox)
            .ok_or_else(|| RouteError::SandboxGone(sandbox.clone()))?;
        let eps = sb
            .table
            .rules
            .get(&(cluster_ip.to_string(), port))
            .ok_or_else(|| RouteError::NoRule(cluster_ip.to_string(), port))?;
        if eps.is_empty() {
            return Err(RouteError::NoEndpoints(cluster_ip.to_string(), port));
        }
        Ok(eps[inner.rng.gen_range(0..eps.len())].clone())
    }

    /// Modeled cost of one proxy scan pass over `pods` sandboxes.
    pub fn scan_cost(&self, pods: usize) -> Micros {
        self.scan_cost_per_pod * pods as Micros
    }
}
