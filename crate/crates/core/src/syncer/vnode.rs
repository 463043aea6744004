use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::clock::Micros;
use crate::model::{ObjectKey, TenantId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VNodeBinding {
    pub tenant: TenantId,
    pub node_name: String,
    pub bound_pods: BTreeSet<String>,
    pub last_heartbeat: Option<Micros>,
}

/// Which tenant Pods are bound to which physical node, per tenant. A tenant
/// sees one virtual node per physical node it uses.
#[derive(Debug, Default)]
pub struct BindingTable {
    bindings: BTreeMap<(TenantId, String), VNodeBinding>,
    by_pod: BTreeMap<(TenantId, ObjectKey), String>,
}

impl BindingTable {
    /// Records that `pod` runs on `node`. Returns true if this is the first
    /// Pod of the tenant on that node.
    pub fn bind(&mut self, tenant: &TenantId, node: &str, pod: &ObjectKey) -> bool {
        let pk = (tenant.clone(), pod.clone());
        match self.by_pod.get(&pk) {
            Some(prev) if prev == node => return false,
            Some(_) => {
                self.unbind(tenant, pod);
            }
            None => {}
        }
        self.by_pod.insert(pk, node.to_string());
        let b = self
            .bindings
            .entry((tenant.clone(), node.to_string()))
            .or_insert_with(|| VNodeBinding {
                tenant: tenant.clone(),
                node_name: node.to_string(),
                bound_pods: BTreeSet::new(),
                last_heartbeat: None,
            });
        let first = b.bound_pods.is_empty();
        b.bound_pods.insert(pod.full_name());
        first
    }

    /// Forgets `pod`. Returns the node it was on if that node now has no
    /// Pods of this tenant.
    pub fn unbind(&mut self, tenant: &TenantId, pod: &ObjectKey) -> Option<String> {
        let node = self.by_pod.remove(&(tenant.clone(), pod.clone()))?;
        let key = (tenant.clone(), node.clone());
        let b = self.bindings.get_mut(&key)?;
        b.bound_pods.remove(&pod.full_name());
        if b.bound_pods.is_empty() {
            self.bindings.remove(&key);
            Some(node)
        } else {
            None
        }
    }

    pub fn node_of(&self, tenant: &TenantId, pod: &ObjectKey) -> Option<&str> {
        self.by_pod
            .get(&(tenant.clone(), pod.clone()))
            .map(String::as_str)
    }

    pub fn is_bound(&self, tenant: &TenantId, node: &str) -> bool {
        self.bindings
            .contains_key(&(tenant.clone(), node.to_string()))
    }

    pub fn nodes_of(&self, tenant: &TenantId) -> Vec<String> {
        self.bindings
            .range((tenant.clone(), String::new())..)
            .take_while(|((t, _), _)| t == tenant)
            .map(|((_, n), _)| n.clone())
            .collect()
    }

    /// Bound Pods of one tenant with their nodes.
    pub fn pods_of(&self, tenant: &TenantId) -> Vec<(ObjectKey, String)> {
        self.by_pod
            .iter()
            .filter(|((t, _), _)| t == tenant)
            .map(|((_, k), n)| (k.clone(), n.clone()))
            .collect()
    }

    pub fn set_heartbeat(&mut self, tenant: &TenantId, node: &str, at: Micros) {
        if let Some(b) = self.bindings.get_mut(&(tenant.clone(), node.to_string())) {
            b.last_heartbeat = Some(at);
        }
    }

    pub fn remove_tenant(&mut self, tenant: &TenantId) {
        self.bindings.retain(|(t, _), _| t != tenant);
        self.by_pod.retain(|(t, _), _| t != tenant);
    }

    pub fn clear(&mut self) {
        self.bindings.clear();
        self.by_pod.clear();
    }

    pub fn all(&self) -> Vec<VNodeBinding> {
        self.bindings.values().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.bindings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bindings.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Kind;

    #[test]
    fn binding_lifecycle() {
        let mut t = BindingTable::default();
        let a = TenantId::new("a");
        let p1 = ObjectKey::namespaced(Kind::Pod, "default", "p1");
        let p2 = ObjectKey::namespaced(Kind::Pod, "default", "p2");
        assert!(t.bind(&a, "n1", &p1));
        assert!(!t.bind(&a, "n1", &p2));
        assert!(!t.bind(&a, "n1", &p1));
        assert_eq!(t.nodes_of(&a), vec!["n1"]);
        assert_eq!(t.unbind(&a, &p1), None);
        assert_eq!(t.unbind(&a, &p2), Some("n1".to_string()));
        assert!(t.is_empty());
        assert_eq!(t.unbind(&a, &p2), None);
    }

    #[test]
    fn tenants_are_separate() {
        let mut t = BindingTable::default();
        let p = ObjectKey::namespaced(Kind::Pod, "default", "p");
        assert!(t.bind(&TenantId::new("a"), "n1", &p));
        assert!(t.bind(&TenantId::new("b"), "n1", &p));
        assert_eq!(t.len(), 2);
        t.remove_tenant(&TenantId::new("a"));
        assert_eq!(t.nodes_of(&TenantId::new("b")), vec!["n1"]);
        assert!(t.nodes_of(&TenantId::new("a")).is_empty());
    }
}
