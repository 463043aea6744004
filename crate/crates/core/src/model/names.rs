//! Super-cluster name mapping.
//!
//! A tenant namespace `ns` of tenant `t` lives in the super cluster as
//! `<t.tenant_id>-<h6>-<ns>`, where `h6` is the first six hex digits of the
//! 32-bit FNV-1a digest of the tenant's canonical uid string.

use super::{ModelError, TenantRecord, Uid};

const FNV_OFFSET: u32 = 0x811c_9dc5;
const FNV_PRIME: u32 = 0x0100_0193;

pub fn fnv1a32(bytes: &[u8]) -> u32 {
    bytes.iter().fold(FNV_OFFSET, |h, b| {
        (h ^ u32::from(*b)).wrapping_mul(FNV_PRIME)
    })
}

/// Six lowercase hex chars identifying a tenant uid.
pub fn short_hash(uid: Uid) -> String {
    let digest = fnv1a32(uid.canonical().as_bytes());
    format!("{digest:08x}")[..6].to_string()
}

/// `<tenant_id>-<h6>-`, the string every mangled namespace of the tenant starts with.
pub fn tenant_prefix(tenant_id: &str, uid: Uid) -> String {
    format!("{tenant_id}-{}-", short_hash(uid))
}

/// Basic DNS-label rules: 1..=63 chars of `[a-z0-9-]`, alphanumeric at both ends.
pub fn validate_dns_label(name: &str) -> Result<(), ModelError> {
    let ok = !name.is_empty()
        && name.len() <= 63
        && name
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-')
        && !name.starts_with('-')
        && !name.ends_with('-');
    if ok {
        Ok(())
    } else {
        Err(ModelError::InvalidName(name.to_string()))
    }
}

pub fn mangle_namespace(tenant: &TenantRecord, tenant_ns: &str) -> Result<String, ModelError> {
    validate_dns_label(tenant_ns)?;
    Ok(format!("{}{tenant_ns}", tenant.prefix))
}
