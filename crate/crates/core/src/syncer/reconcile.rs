//! Per-key reconcile logic. `plan` only reads informer caches; `apply` does
//! the writes, guarded by versions and uids so a stale plan fails instead of
//! clobbering newer state.

use std::collections::BTreeMap;

use crate::backpressure::Permit;
use crate::model::{
    mangle_namespace, Change, Kind, ModelError, NewObject, ObjectKey, PodStatus, Spec, Status,
    TenantRecord, TenantRegistry, Uid, VersionedObject,
};
use crate::store::StoreError;

use super::{
    Applied, ApplyResult, Direction, Outcome, Syncer, WorkKey, WriteOp, OWNER_ANNOTATION,
    UID_ANNOTATION,
};

/// Maps a super-cluster key back to the tenant object it mirrors.
pub(crate) fn tenant_key_of(registry: &TenantRegistry, super_key: &ObjectKey) -> Option<WorkKey> {
    let scope = if super_key.kind.is_cluster_scoped() {
        &super_key.name
    } else {
        &super_key.namespace
    };
    let (tenant, rest) = registry.demangle_namespace(scope).ok()?;
    let key = if super_key.kind.is_cluster_scoped() {
        ObjectKey::new(super_key.kind, "", rest)
    } else {
        ObjectKey::new(super_key.kind, rest, super_key.name.clone())
    }
    .ok()?;
    Some(WorkKey { tenant, key })
}

/// Super-cluster key of a tenant object.
pub(crate) fn to_super_key(
    record: &TenantRecord,
    key: &ObjectKey,
) -> Result<ObjectKey, ModelError> {
    if key.kind.is_cluster_scoped() {
        ObjectKey::new(key.kind, "", mangle_namespace(record, &key.name)?)
    } else {
        ObjectKey::new(
            key.kind,
            mangle_namespace(record, &key.namespace)?,
            key.name.clone(),
        )
    }
}

/// The super-cluster object a tenant object should turn into.
pub(crate) fn build_super(
    record: &TenantRecord,
    t: &VersionedObject,
) -> Result<NewObject, ModelError> {
    let mut obj = NewObject::new(to_super_key(record, &t.key)?, t.spec.tenant_projection());
    obj.labels = t.labels.clone();
    obj.annotations = owned_annotations(record, t);
    if t.key.kind == Kind::Pod {
        obj.status = Status::Pod(PodStatus::default());
    }
    Ok(obj)
}

fn owned_annotations(record: &TenantRecord, t: &VersionedObject) -> BTreeMap<String, String> {
    let mut a = t.annotations.clone();
    a.insert(OWNER_ANNOTATION.to_string(), record.tenant_id.to_string());
    a.insert(UID_ANNOTATION.to_string(), t.uid.canonical());
    a
}

/// Whether `s` mirrors this exact tenant object (not an earlier one with
/// the same name).
pub(crate) fn mirrors(t: &VersionedObject, s: &VersionedObject) -> bool {
    s.annotations.get(UID_ANNOTATION).map(String::as_str) == Some(t.uid.canonical().as_str())
}

pub(crate) fn owned_by(record: &TenantRecord, s: &VersionedObject) -> bool {
    s.annotations.get(OWNER_ANNOTATION).map(String::as_str) == Some(record.tenant_id.as_str())
}

/// Tenant-owned fields differ between the tenant object and its mirror.
pub(crate) fn drifted(record: &TenantRecord, t: &VersionedObject, s: &VersionedObject) -> bool {
    s.spec.tenant_projection() != t.spec.tenant_projection()
        || s.labels != t.labels
        || s.annotations != owned_annotations(record, t)
}

/// Provider-owned Pod fields the tenant has not caught up with.
pub(crate) fn status_lags(t: &VersionedObject, s: &VersionedObject) -> bool {
    let node = |o: &VersionedObject| o.pod_spec().map(|p| p.node_name.clone());
    node(t) != node(s) || t.status != s.status
}

pub(crate) enum Plan {
    Nothing(Outcome),
    Create {
        record: TenantRecord,
        obj: NewObject,
    },
    /// The super object mirrors a previous incarnation of the tenant object.
    Replace {
        record: TenantRecord,
        old_uid: Uid,
        obj: NewObject,
    },
    Update {
        record: TenantRecord,
        key: ObjectKey,
        expected: u64,
        change: Change,
    },
    Delete {
        record: TenantRecord,
        key: ObjectKey,
        uid: Uid,
    },
    /// The super Pod is gone: forget its binding.
    Unbind {
        record: TenantRecord,
    },
    Upward {
        record: TenantRecord,
        update: Option<(u64, Change)>,
        bind: Option<String>,
        made_ready: bool,
        super_ready_at: Option<u64>,
    },
}

impl Syncer {
    pub(super) fn plan(&self, direction: Direction, wk: &WorkKey) -> Plan {
        let Some((record, informer)) = self.tenant_parts(&wk.tenant) else {
            return Plan::Nothing(Outcome::Dropped);
        };
        let Ok(skey) = to_super_key(&record, &wk.key) else {
            return Plan::Nothing(Outcome::Dropped);
        };
        let t = informer.get(&wk.key);
        let s = self.super_informer().get(&skey);
        match direction {
            Direction::Downward => plan_down(record, skey, t.as_deref(), s.as_deref()),
            Direction::Upward => plan_up(record, t.as_deref(), s.as_deref()),
        }
    }

    pub(super) fn apply(
        &self,
        wk: &WorkKey,
        plan: Plan,
        permit: &mut Option<Permit>,
    ) -> ApplyResult {
        let store = self.super_store.exempt();
        match plan {
            Plan::Nothing(o) => Ok(Applied::of(o)),
            Plan::Create { record, obj } => {
                let key = obj.key.clone();
                let res = store.create(obj);
                self.audit_super_write(&record, WriteOp::Create, &key, res.is_ok());
                res?;
                self.admitted(key, permit);
                Ok(Applied::of(Outcome::Created))
            }
            Plan::Replace {
                record,
                old_uid,
                obj,
            } => {
                let key = obj.key.clone();
                let res = store.delete_uid(&key, old_uid);
                self.audit_super_write(&record, WriteOp::Delete, &key, res.is_ok());
                match res {
                    Ok(_) | Err(StoreError::NotFound(_)) => {}
                    Err(e) => return Err(e),
                }
                let res = store.create(obj);
                self.audit_super_write(&record, WriteOp::Create, &key, res.is_ok());
                res?;
                self.admitted(key, permit);
                Ok(Applied::of(Outcome::Created))
            }
            Plan::Update {
                record,
                key,
                expected,
                change,
            } => {
                let res = store.update(&key, Some(expected), change);
                self.audit_super_write(&record, WriteOp::Update, &key, res.is_ok());
                res?;
                Ok(Applied::of(Outcome::Updated))
            }
            Plan::Delete { record, key, uid } => {
                let res = store.delete_uid(&key, uid);
                self.audit_super_write(&record, WriteOp::Delete, &key, res.is_ok());
                match res {
                    Ok(_) => Ok(Applied::of(Outcome::Deleted)),
                    Err(StoreError::NotFound(_)) => Ok(Applied::of(Outcome::NoOp)),
                    Err(e) => Err(e),
                }
            }
            Plan::Unbind { record } => {
                let mut b = self.bindings.lock();
                if let Some(node) = b.unbind(&record.tenant_id, &wk.key) {
                    self.delete_vnode(&record.tenant_id, &node);
                }
                Ok(Applied::of(Outcome::NoOp))
            }
            Plan::Upward {
                record,
                update,
                bind,
                made_ready,
                super_ready_at,
            } => {
                if let Some(node) = &bind {
                    let mut b = self.bindings.lock();
                    let first = b.bind(&record.tenant_id, node, &wk.key);
                    // The virtual node must exist before a Pod points at it.
                    self.ensure_vnode_locked(&record.tenant_id, node, first);
                }
                let Some((expected, change)) = update else {
                    return Ok(Applied::of(Outcome::NoOp));
                };
                let res = record
                    .store
                    .exempt()
                    .update(&wk.key, Some(expected), change);
                self.audit_tenant_write(&record, WriteOp::Update, &wk.key, res.is_ok());
                match res {
                    Ok(_) => Ok(Applied {
                        outcome: Outcome::Updated,
                        made_ready,
                        super_ready_at,
                    }),
                    Err(StoreError::NotFound(_)) => Ok(Applied::of(Outcome::NoOp)),
                    Err(e) => Err(e),
                }
            }
        }
    }

    /// A new super Pod holds its admission slot until it is bound.
    fn admitted(&self, key: ObjectKey, permit: &mut Option<Permit>) {
        if key.kind == Kind::Pod {
            if let Some(p) = permit.take() {
                self.window.assign(p, key, self.timer.now());
            }
        }
    }
}

fn plan_down(
    record: TenantRecord,
    skey: ObjectKey,
    t: Option<&VersionedObject>,
    s: Option<&VersionedObject>,
) -> Plan {
    match (t, s) {
        (None, None) => Plan::Nothing(Outcome::NoOp),
        (None, Some(s)) if owned_by(&record, s) => Plan::Delete {
            record,
            key: skey,
            uid: s.uid,
        },
        // Not ours; never touch it.
        (None, Some(_)) => Plan::Nothing(Outcome::NoOp),
        (Some(t), None) => match build_super(&record, t) {
            Ok(obj) => Plan::Create { record, obj },
            Err(_) => Plan::Nothing(Outcome::Dropped),
        },
        (Some(t), Some(s)) if !mirrors(t, s) => {
            if !owned_by(&record, s) {
                return Plan::Nothing(Outcome::Dropped);
            }
            match build_super(&record, t) {
                Ok(obj) => Plan::Replace {
                    record,
                    old_uid: s.uid,
                    obj,
                },
                Err(_) => Plan::Nothing(Outcome::Dropped),
            }
        }
        (Some(t), Some(s)) if drifted(&record, t, s) => {
            let spec = match (&t.spec, &s.spec) {
                (Spec::Pod(tp), Spec::Pod(sp)) => {
                    let mut p = tp.tenant_projection();
                    p.node_name = sp.node_name.clone();
                    p.service_epoch_at_admission = sp.service_epoch_at_admission;
                    Spec::Pod(p)
                }
                (other, _) => other.clone(),
            };
            let change = Change {
                spec: Some(spec),
                labels: Some(t.labels.clone()),
                annotations: Some(owned_annotations(&record, t)),
                ..Default::default()
            };
            Plan::Update {
                record,
                key: skey,
                expected: s.resource_version,
                change,
            }
        }
        (Some(_), Some(_)) => Plan::Nothing(Outcome::NoOp),
    }
}

fn plan_up(record: TenantRecord, t: Option<&VersionedObject>, s: Option<&VersionedObject>) -> Plan {
    let Some(s) = s else {
        return Plan::Unbind { record };
    };
    let Some(t) = t else {
        return Plan::Nothing(Outcome::NoOp);
    };
    if !mirrors(t, s) {
        return Plan::Nothing(Outcome::NoOp);
    }
    let (Some(tp), Some(sp)) = (t.pod_spec(), s.pod_spec()) else {
        return Plan::Nothing(Outcome::NoOp);
    };
    let bind = (!sp.node_name.is_empty()).then(|| sp.node_name.clone());
    let update = status_lags(t, s).then(|| {
        let mut spec = tp.clone();
        spec.node_name = sp.node_name.clone();
        let change = Change {
            spec: Some(Spec::Pod(spec)),
            status: Some(s.status.clone()),
            ..Default::default()
        };
        (t.resource_version, change)
    });
    let made_ready = update.is_some() && s.status.pod_ready() && !t.status.pod_ready();
    Plan::Upward {
        record,
        update,
        bind,
        made_ready,
        super_ready_at: s.status.as_pod().and_then(|p| p.ready_at),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{PodSpec, TenantId};
    use crate::store::ObjectStore;

    fn record(id: &str, uid: u128) -> TenantRecord {
        TenantRecord::new(id, Uid(uid), 1, id.as_bytes(), ObjectStore::simple(id)).unwrap()
    }

    fn obj(key: ObjectKey, uid: u128, spec: Spec) -> VersionedObject {
        VersionedObject {
            key,
            uid: Uid(uid),
            resource_version: 1,
            spec,
            status: Status::None,
            labels: BTreeMap::new(),
            annotations: BTreeMap::new(),
            deletion_marked: false,
            created_at: 0,
        }
    }

    #[test]
    fn keys_round_trip() {
        let reg = TenantRegistry::new();
        let r = record("vc-a", 0);
        reg.register(r.clone()).unwrap();
        let pod = ObjectKey::namespaced(Kind::Pod, "default", "web");
        let s = to_super_key(&r, &pod).unwrap();
        assert_eq!(s.namespace, "vc-a-f0c864-default");
        let back = tenant_key_of(&reg, &s).unwrap();
        assert_eq!(back.tenant, TenantId::new("vc-a"));
        assert_eq!(back.key, pod);
        let ns = ObjectKey::cluster(Kind::Namespace, "default");
        let s = to_super_key(&r, &ns).unwrap();
        assert_eq!(s.name, "vc-a-f0c864-default");
        assert_eq!(tenant_key_of(&reg, &s).unwrap().key, ns);
        assert!(
            tenant_key_of(&reg, &ObjectKey::namespaced(Kind::Pod, "kube-system", "x")).is_none()
        );
    }

    #[test]
    fn downward_decisions() {
        let r = record("a", 1);
        let key = ObjectKey::namespaced(Kind::Pod, "default", "p");
        let t = obj(key.clone(), 7, Spec::Pod(PodSpec::default()));
        let built = build_super(&r, &t).unwrap();
        let skey = built.key.clone();
        assert!(matches!(
            plan_down(r.clone(), skey.clone(), Some(&t), None),
            Plan::Create { .. }
        ));

        let mut s = obj(skey.clone(), 99, built.spec.clone());
        s.annotations = built.annotations.clone();
        assert!(mirrors(&t, &s) && owned_by(&r, &s) && !drifted(&r, &t, &s));
        assert!(matches!(
            plan_down(r.clone(), skey.clone(), Some(&t), Some(&s)),
            Plan::Nothing(Outcome::NoOp)
        ));

        // Binding is provider state, not drift.
        if let Spec::Pod(p) = &mut s.spec {
            p.node_name = "n1".into();
        }
        assert!(!drifted(&r, &t, &s));

        let mut t2 = t.clone();
        t2.labels.insert("app".into(), "web".into());
        match plan_down(r.clone(), skey.clone(), Some(&t2), Some(&s)) {
            Plan::Update { change, .. } => {
                let Some(Spec::Pod(p)) = change.spec else {
                    panic!()
                };
                assert_eq!(p.node_name, "n1");
            }
            _ => panic!("expected update"),
        }

        let mut t3 = t.clone();
        t3.uid = Uid(8);
        assert!(matches!(
            plan_down(r.clone(), skey.clone(), Some(&t3), Some(&s)),
            Plan::Replace { .. }
        ));
        assert!(matches!(
            plan_down(r.clone(), skey.clone(), None, Some(&s)),
            Plan::Delete { .. }
        ));

        let mut foreign = s.clone();
        foreign.annotations.clear();
        assert!(matches!(
            plan_down(r, skey, None, Some(&foreign)),
            Plan::Nothing(Outcome::NoOp)
        ));
    }

    #[test]
    fn upward_decisions() {
        let r = record("a", 1);
        let key = ObjectKey::namespaced(Kind::Pod, "default", "p");
        let mut t = obj(key, 7, Spec::Pod(PodSpec::default()));
        t.status = Status::Pod(PodStatus::default());
        let built = build_super(&r, &t).unwrap();
        let mut s = obj(built.key, 99, built.spec);
        s.annotations = built.annotations;
        s.status = Status::Pod(PodStatus::default());
        assert!(matches!(
            plan_up(r.clone(), Some(&t), Some(&s)),
            Plan::Upward {
                update: None,
                bind: None,
                ..
            }
        ));
        if let Spec::Pod(p) = &mut s.spec {
            p.node_name = "n1".into();
        }
        s.status = Status::Pod(PodStatus {
            ready: true,
            ready_at: Some(42),
            ..Default::default()
        });
        match plan_up(r.clone(), Some(&t), Some(&s)) {
            Plan::Upward {
                update: Some(_),
                bind: Some(n),
                made_ready: true,
                super_ready_at: Some(42),
                ..
            } => assert_eq!(n, "n1"),
            _ => panic!("expected status copy"),
        }
        assert!(matches!(plan_up(r, Some(&t), None), Plan::Unbind { .. }));
    }
}
