//! Periodic full comparison of each tenant against the super cluster. It
//! catches anything the event path missed (dropped notifications, failed
//! writes that ran out of retries) by requeueing the affected keys.

use std::collections::BTreeMap;

use crate::model::{Kind, ObjectKey, TenantId};

use super::reconcile::{drifted, mirrors, owned_by, status_lags, tenant_key_of, to_super_key};
use super::{AuditEntry, Direction, Syncer, WorkKey};

impl Syncer {
    /// Compares one tenant with the super cluster and requeues every key
    /// found out of sync. Returns the number of mismatches.
    pub fn periodic_scan(&self, tenant: &TenantId) -> usize {
        let Some((record, informer)) = self.tenant_parts(tenant) else {
            return 0;
        };
        let sup = self.super_informer();
        let mut mismatches = 0;
        let mut requeue = |direction, key| {
            mismatches += 1;
            self.enqueue(
                direction,
                WorkKey {
                    tenant: tenant.clone(),
                    key,
                },
            );
        };

        for kind in Kind::DOWNWARD {
            for t in informer.list(kind) {
                let Ok(skey) = to_super_key(&record, &t.key) else {
                    continue;
                };
                match sup.get(&skey) {
                    None => requeue(Direction::Downward, t.key.clone()),
                    Some(s) if !mirrors(&t, &s) || drifted(&record, &t, &s) => {
                        requeue(Direction::Downward, t.key.clone())
                    }
                    Some(s) if kind == Kind::Pod && status_lags(&t, &s) => {
                        requeue(Direction::Upward, t.key.clone())
                    }
                    Some(_) => {}
                }
            }

            // Mirrors left behind by deleted tenant objects.
            let supers = if kind.is_cluster_scoped() {
                sup.list(kind)
                    .into_iter()
                    .filter(|s| s.key.name.starts_with(record.prefix.as_str()))
                    .collect()
            } else {
                sup.list_prefix(kind, &record.prefix)
            };
            for s in supers {
                let Some(wk) = tenant_key_of(&self.registry, &s.key) else {
                    continue;
                };
                // Objects the syncer did not create are never its to delete.
                if wk.tenant == *tenant && owned_by(&record, &s) && informer.get(&wk.key).is_none()
                {
                    requeue(Direction::Downward, wk.key);
                }
            }
        }

        // Bindings follow the super cluster's placements; a lost delete
        // notification can leave one behind for a Pod gone on both sides.
        let placed: BTreeMap<ObjectKey, String> = sup
            .list_prefix(Kind::Pod, &record.prefix)
            .into_iter()
            .filter_map(|s| {
                let node = s.pod_spec()?.node_name.clone();
                let wk = tenant_key_of(&self.registry, &s.key)?;
                // Mirrors of deleted tenant Pods are about to go away.
                let live = informer.get(&wk.key).is_some_and(|t| mirrors(&t, &s));
                (!node.is_empty() && wk.tenant == *tenant && live).then_some((wk.key, node))
            })
            .collect();
        {
            let mut b = self.bindings.lock();
            for (pod, node) in b.pods_of(tenant) {
                if placed.get(&pod) != Some(&node) {
                    b.unbind(tenant, &pod);
                    mismatches += 1;
                }
            }
            for (pod, node) in &placed {
                if b.node_of(tenant, pod) != Some(node.as_str()) {
                    b.bind(tenant, node, pod);
                    mismatches += 1;
                }
            }
            // Virtual nodes should match the binding table exactly.
            for node in b.nodes_of(tenant) {
                if self.ensure_vnode_locked(tenant, &node, false) {
                    mismatches += 1;
                }
            }
        }
        mismatches += self.gc_tenant_vnodes(tenant);

        self.audit.record(AuditEntry::Scan {
            at: self.timer.now(),
            tenant: tenant.clone(),
            mismatches,
        });
        if mismatches > 0 {
            tracing::debug!(%tenant, mismatches, "scan requeued keys");
        }
        mismatches
    }

    /// Scans every tenant. Returns the total number of mismatches.
    pub fn scan_all(&self) -> usize {
        self.tenant_ids()
            .iter()
            .map(|t| self.periodic_scan(t))
            .sum()
    }
}
