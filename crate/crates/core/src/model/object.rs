use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::clock::Micros;

/// Resource kinds understood by the stores and the syncer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Kind {
    Namespace,
    Pod,
    Service,
    Endpoints,
    Secret,
    ConfigMap,
    Node,
    Event,
}

impl Kind {
    pub const ALL: [Kind; 8] = [
        Kind::Namespace,
        Kind::Pod,
        Kind::Service,
        Kind::Endpoints,
        Kind::Secret,
        Kind::ConfigMap,
        Kind::Node,
        Kind::Event,
    ];

    /// Kinds whose source of truth is the tenant control plane.
    pub const DOWNWARD: [Kind; 6] = [
        Kind::Namespace,
        Kind::Pod,
        Kind::Service,
        Kind::Secret,
        Kind::ConfigMap,
        Kind::Endpoints,
    ];

    pub fn is_cluster_scoped(self) -> bool {
        matches!(self, Kind::Namespace | Kind::Node)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Namespace => "Namespace",
            Kind::Pod => "Pod",
            Kind::Service => "Service",
            Kind::Endpoints => "Endpoints",
            Kind::Secret => "Secret",
            Kind::ConfigMap => "ConfigMap",
            Kind::Node => "Node",
            Kind::Event => "Event",
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Identity of an object within one store: `kind` + `namespace/name`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ObjectKey {
    pub kind: Kind,
    pub namespace: String,
    pub name: String,
}

impl ObjectKey {
    pub fn new(
        kind: Kind,
        namespace: impl Into<String>,
        name: impl Into<String>,
    ) -> Result<Self, ModelError> {
        let key = ObjectKey {
            kind,
            namespace: namespace.into(),
            name: name.into(),
        };
        if key.name.is_empty() {
            return Err(ModelError::InvalidKey(key.to_string()));
        }
        if kind.is_cluster_scoped() != key.namespace.is_empty() {
            return Err(ModelError::InvalidKey(key.to_string()));
        }
        Ok(key)
    }

    pub fn namespaced(kind: Kind, namespace: &str, name: &str) -> Self {
        Self::new(kind, namespace, name).expect("valid namespaced key")
    }

    pub fn cluster(kind: Kind, name: &str) -> Self {
        Self::new(kind, "", name).expect("valid cluster-scoped key")
    }

    /// `namespace/name`, or just `name` for cluster-scoped objects.
    pub fn full_name(&self) -> String {
        if self.namespace.is_empty() {
            self.name.clone()
        } else {
            format!("{}/{}", self.namespace, self.name)
        }
    }
}

impl fmt::Display for ObjectKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.kind, self.namespace, self.name)
    }
}

/// 128-bit opaque identifier. Its canonical text form is 32 lowercase hex chars.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Uid(pub u128);

impl Uid {
    pub fn canonical(&self) -> String {
        format!("{:032x}", self.0)
    }
}

impl fmt::Display for Uid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:032x}", self.0)
    }
}

/// Cheaply clonable tenant identity (the VC object name).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TenantId(Arc<str>);

impl TenantId {
    pub fn new(id: impl AsRef<str>) -> Self {
        TenantId(Arc::from(id.as_ref()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for TenantId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for TenantId {
    fn from(s: &str) -> Self {
        TenantId::new(s)
    }
}

/// Matches objects whose label `key` equals `value`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LabelSelector {
    pub key: String,
    pub value: String,
}

impl LabelSelector {
    pub fn new(key: impl Into<String>, value: impl Into<String>) -> Self {
        Self {
            key: key.into(),
            value: value.into(),
        }
    }

    pub fn matches(&self, labels: &BTreeMap<String, String>) -> bool {
        labels.get(&self.key) == Some(&self.value)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PodSpec {
    pub containers: Vec<String>,
    /// Empty until bound; set at most once.
    pub node_name: String,
    pub anti_affinity: Option<BTreeSet<LabelSelector>>,
    /// Service generation of the pod's tenant when the pod was admitted to the
    /// super cluster. Stamped by admission, never by the tenant.
    pub service_epoch_at_admission: u64,
}

impl PodSpec {
    /// The part of the spec owned by the tenant: binding and admission
    /// stamps are excluded.
    pub fn tenant_projection(&self) -> PodSpec {
        PodSpec {
            containers: self.containers.clone(),
            node_name: String::new(),
            anti_affinity: self.anti_affinity.clone(),
            service_epoch_at_admission: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PodPhase {
    #[default]
    Pending,
    Running,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PodStatus {
    pub phase: PodPhase,
    pub ready: bool,
    pub ready_at: Option<Micros>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ServiceSpec {
    pub cluster_ip: String,
    pub ports: Vec<u16>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EndpointsSpec {
    pub addresses: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct NodeSpec {
    /// Physical node a virtual node mirrors; empty for physical nodes.
    pub mirrors: String,
    pub capacity: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct NodeStatus {
    pub last_heartbeat: Option<Micros>,
}

/// Kind-specific desired state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Spec {
    Pod(PodSpec),
    Service(ServiceSpec),
    Endpoints(EndpointsSpec),
    Node(NodeSpec),
    /// Opaque key/value payload (Namespace, Secret, ConfigMap, Event).
    Data(BTreeMap<String, String>),
}

impl Spec {
    pub fn empty_data() -> Self {
        Spec::Data(BTreeMap::new())
    }

    pub fn as_pod(&self) -> Option<&PodSpec> {
        match self {
            Spec::Pod(p) => Some(p),
            _ => None,
        }
    }

    /// Tenant-owned projection used by downward comparisons.
    pub fn tenant_projection(&self) -> Spec {
        match self {
            Spec::Pod(p) => Spec::Pod(p.tenant_projection()),
            other => other.clone(),
        }
    }
}

/// Kind-specific observed state, written by the provider side.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum Status {
    #[default]
    None,
    Pod(PodStatus),
    Node(NodeStatus),
}

impl Status {
    pub fn as_pod(&self) -> Option<&PodStatus> {
        match self {
            Status::Pod(p) => Some(p),
            _ => None,
        }
    }

    pub fn pod_ready(&self) -> bool {
        self.as_pod().is_some_and(|p| p.ready)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VersionedObject {
    pub key: ObjectKey,
    pub uid: Uid,
    pub resource_version: u64,
    pub spec: Spec,
    pub status: Status,
    pub labels: BTreeMap<String, String>,
    pub annotations: BTreeMap<String, String>,
    pub deletion_marked: bool,
    pub created_at: Micros,
}

impl VersionedObject {
    /// Canonical textual encoding used in reports: `kind/namespace/name@version`.
    pub fn encode(&self) -> String {
        format!("{}@{}", self.key, self.resource_version)
    }

    pub fn pod_spec(&self) -> Option<&PodSpec> {
        self.spec.as_pod()
    }
}

/// An object as submitted to `create`: everything except store-assigned fields.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NewObject {
    pub key: ObjectKey,
    pub spec: Spec,
    pub status: Status,
    pub labels: BTreeMap<String, String>,
    pub annotations: BTreeMap<String, String>,
}

impl NewObject {
    pub fn new(key: ObjectKey, spec: Spec) -> Self {
        NewObject {
            key,
            spec,
            status: Status::None,
            labels: BTreeMap::new(),
            annotations: BTreeMap::new(),
        }
    }

    pub fn with_status(mut self, status: Status) -> Self {
        self.status = status;
        self
    }

    pub fn with_label(mut self, k: impl Into<String>, v: impl Into<String>) -> Self {
        self.labels.insert(k.into(), v.into());
        self
    }

    pub fn with_annotation(mut self, k: impl Into<String>, v: impl Into<String>) -> Self {
        self.annotations.insert(k.into(), v.into());
        self
    }

    pub fn pod(namespace: &str, name: &str, spec: PodSpec) -> Self {
        NewObject::new(
            ObjectKey::namespaced(Kind::Pod, namespace, name),
            Spec::Pod(spec),
        )
        .with_status(Status::Pod(PodStatus::default()))
    }

    pub fn namespace(name: &str) -> Self {
        NewObject::new(
            ObjectKey::cluster(Kind::Namespace, name),
            Spec::empty_data(),
        )
    }
}

/// A partial update. `None` fields are left untouched.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Change {
    pub spec: Option<Spec>,
    pub status: Option<Status>,
    pub labels: Option<BTreeMap<String, String>>,
    pub annotations: Option<BTreeMap<String, String>>,
    pub deletion_marked: Option<bool>,
}

impl Change {
    pub fn spec(spec: Spec) -> Self {
        Change {
            spec: Some(spec),
            ..Default::default()
        }
    }

    pub fn status(status: Status) -> Self {
        Change {
            status: Some(status),
            ..Default::default()
        }
    }
}
