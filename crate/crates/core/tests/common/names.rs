//! Random tenant registries and a round-trip/collision check over them.
#![allow(dead_code)]

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vcsim_core::model::{mangle_namespace, TenantId, TenantRecord, TenantRegistry, Uid};
use vcsim_core::store::ObjectStore;

pub fn label(rng: &mut ChaCha8Rng, max: usize) -> String {
    const CHARS: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789-";
    let len = rng.gen_range(1..=max);
    let mut s: String = (0..len)
        .map(|_| CHARS[rng.gen_range(0..CHARS.len())] as char)
        .collect();
    // DNS labels start and end alphanumeric.
    if s.starts_with('-') {
        s.replace_range(0..1, "a");
    }
    if s.ends_with('-') {
        s.pop();
        s.push('z');
    }
    s
}

pub fn registry(rng: &mut ChaCha8Rng, n: usize) -> (TenantRegistry, Vec<TenantRecord>) {
    let reg = TenantRegistry::new();
    let mut records = Vec::new();
    while records.len() < n {
        let id = label(rng, 12);
        let record = TenantRecord::new(
            &id,
            Uid(rng.gen()),
            1,
            format!("cred-{}", rng.gen::<u64>()).as_bytes(),
            ObjectStore::simple(&id),
        )
        .unwrap();
        // Duplicate ids and prefix clashes are refused; draw another.
        if reg.register(record.clone()).is_ok() {
            records.push(record);
        }
    }
    (reg, records)
}

/// Maps `pairs` random (tenant, namespace) pairs and checks every one comes
/// back and no two distinct pairs share a super name.
pub fn check(seed: u64, tenants: usize, pairs: usize) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (reg, records) = registry(&mut rng, tenants);
    let mut seen: HashMap<String, (TenantId, String)> = HashMap::new();
    for _ in 0..pairs {
        let r = &records[rng.gen_range(0..records.len())];
        let ns = label(&mut rng, 20);
        let mangled = mangle_namespace(r, &ns).map_err(|e| e.to_string())?;
        let back = reg
            .demangle_namespace(&mangled)
            .map_err(|e| e.to_string())?;
        let pair = (r.tenant_id.clone(), ns);
        if back != pair {
            return Err(format!("{mangled}: {back:?} != {pair:?}"));
        }
        if let Some(prev) = seen.insert(mangled.clone(), pair.clone()) {
            if prev != pair {
                return Err(format!("collision on {mangled}: {prev:?} and {pair:?}"));
            }
        }
    }
    Ok(())
}
