//! Shared domain types: object identity and payloads, tenants, and the
//! tenant-to-super-cluster name mapping.

mod names;
mod object;
mod tenant;

pub use names::{fnv1a32, mangle_namespace, short_hash, tenant_prefix, validate_dns_label};
pub use object::{
    Change, EndpointsSpec, Kind, LabelSelector, NewObject, NodeSpec, NodeStatus, ObjectKey,
    PodPhase, PodSpec, PodStatus, ServiceSpec, Spec, Status, TenantId, Uid, VersionedObject,
};
pub use tenant::{Fingerprint, TenantRecord, TenantRegistry};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModelError {
    #[error("invalid object key `{0}`")]
    InvalidKey(String),
    #[error("invalid name `{0}`")]
    InvalidName(String),
    #[error("tenant weight must be at least 1")]
    InvalidWeight,
    #[error("tenant `{0}` already registered")]
    DuplicateTenant(String),
    #[error("credential of tenant `{0}` is already registered")]
    DuplicateCredential(String),
    #[error("prefix of tenant `{tenant}` collides with tenant `{existing}`")]
    PrefixCollision { tenant: String, existing: String },
    #[error("namespace `{0}` does not belong to any registered tenant")]
    UnknownNamespace(String),
    #[error("credential does not match any registered tenant")]
    AuthenticationUnknown,
}
