use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use parking_lot::RwLock;
use sha2::{Digest, Sha256};

use super::names::{tenant_prefix, validate_dns_label};
use super::{ModelError, TenantId, Uid};
use crate::store::ObjectStore;

/// SHA-256 digest of a tenant access credential.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Fingerprint(pub [u8; 32]);

impl Fingerprint {
    pub fn of(credential: &[u8]) -> Self {
        Fingerprint(Sha256::digest(credential).into())
    }
}

impl fmt::Debug for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fingerprint({self})")
    }
}

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0[..8] {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

#[derive(Clone)]
pub struct TenantRecord {
    pub tenant_id: TenantId,
    pub vc_uid: Uid,
    pub weight: u32,
    pub prefix: String,
    pub credential_fingerprint: Fingerprint,
    pub store: Arc<ObjectStore>,
}

impl TenantRecord {
    pub fn new(
        tenant_id: &str,
        vc_uid: Uid,
        weight: u32,
        credential: &[u8],
        store: Arc<ObjectStore>,
    ) -> Result<Self, ModelError> {
        validate_dns_label(tenant_id)?;
        if weight == 0 {
            return Err(ModelError::InvalidWeight);
        }
        Ok(TenantRecord {
            tenant_id: TenantId::new(tenant_id),
            vc_uid,
            weight,
            prefix: tenant_prefix(tenant_id, vc_uid),
            credential_fingerprint: Fingerprint::of(credential),
            store,
        })
    }
}

impl fmt::Debug for TenantRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TenantRecord")
            .field("tenant_id", &self.tenant_id)
            .field("vc_uid", &self.vc_uid)
            .field("weight", &self.weight)
            .field("prefix", &self.prefix)
            .finish()
    }
}

#[derive(Default)]
struct RegistryInner {
    by_id: BTreeMap<TenantId, TenantRecord>,
    by_prefix: BTreeMap<String, TenantId>,
    by_fingerprint: BTreeMap<Fingerprint, TenantId>,
}

/// The set of registered tenants. Lookups take a read lock; registration is
/// serialized by the write lock.
///
/// Registered prefixes form a prefix-free set, so at most one tenant can match
/// any super-cluster namespace.
#[derive(Default)]
pub struct TenantRegistry {
    inner: RwLock<RegistryInner>,
}

impl TenantRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&self, record: TenantRecord) -> Result<(), ModelError> {
        let mut inner = self.inner.write();
        if inner.by_id.contains_key(&record.tenant_id) {
            return Err(ModelError::DuplicateTenant(record.tenant_id.to_string()));
        }
        if inner
            .by_fingerprint
            .contains_key(&record.credential_fingerprint)
        {
            return Err(ModelError::DuplicateCredential(
                record.tenant_id.to_string(),
            ));
        }
        let p = &record.prefix;
        // An existing prefix that is a prefix of ours ...
        let shorter = p
            .match_indices('-')
            .map(|(i, _)| &p[..=i])
            .find_map(|cand| inner.by_prefix.get(cand));
        // ... or one that extends ours.
        let longer = inner
            .by_prefix
            .range(p.clone()..)
            .next()
            .filter(|(q, _)| q.starts_with(p.as_str()))
            .map(|(_, id)| id);
        if let Some(other) = shorter.or(longer) {
            return Err(ModelError::PrefixCollision {
                tenant: record.tenant_id.to_string(),
                existing: other.to_string(),
            });
        }
        inner.by_prefix.insert(p.clone(), record.tenant_id.clone());
        inner
            .by_fingerprint
            .insert(record.credential_fingerprint, record.tenant_id.clone());
        inner.by_id.insert(record.tenant_id.clone(), record);
        Ok(())
    }

    pub fn remove(&self, tenant: &TenantId) -> Option<TenantRecord> {
        let mut inner = self.inner.write();
        let record = inner.by_id.remove(tenant)?;
        inner.by_prefix.remove(&record.prefix);
        inner.by_fingerprint.remove(&record.credential_fingerprint);
        Some(record)
    }

    pub fn get(&self, tenant: &TenantId) -> Option<TenantRecord> {
        self.inner.read().by_id.get(tenant).cloned()
    }

    pub fn len(&self) -> usize {
        self.inner.read().by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registered tenants in id order.
    pub fn tenants(&self) -> Vec<TenantRecord> {
        self.inner.read().by_id.values().cloned().collect()
    }

    /// Inverse of [`mangle_namespace`](super::mangle_namespace).
    pub fn demangle_namespace(&self, super_ns: &str) -> Result<(TenantId, String), ModelError> {
        let inner = self.inner.read();
        for (i, _) in super_ns.match_indices('-') {
            if let Some(id) = inner.by_prefix.get(&super_ns[..=i]) {
                let rest = &super_ns[i + 1..];
                if rest.is_empty() {
                    break;
                }
                return Ok((id.clone(), rest.to_string()));
            }
        }
        Err(ModelError::UnknownNamespace(super_ns.to_string()))
    }

    pub fn resolve_tenant_by_credential(
        &self,
        fingerprint: &Fingerprint,
    ) -> Result<TenantRecord, ModelError> {
        let inner = self.inner.read();
        inner
            .by_fingerprint
            .get(fingerprint)
            .and_then(|id| inner.by_id.get(id))
            .cloned()
            .ok_or(ModelError::AuthenticationUnknown)
    }
}
