use std::fmt;
use std::io::{self, Write};

use parking_lot::Mutex;
use serde::Serialize;

use crate::clock::Micros;
use crate::model::{ObjectKey, TenantId};

use super::{Direction, Outcome};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum WriteTarget {
    Tenant(TenantId),
    Super,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum WriteOp {
    Create,
    Update,
    Delete,
}

/// One line of the audit log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AuditEntry {
    /// A store write, tagged with the tenant whose object it derives from.
    Write {
        at: Micros,
        origin: TenantId,
        origin_prefix: String,
        target: WriteTarget,
        op: WriteOp,
        key: String,
        ok: bool,
    },
    Reconcile {
        at: Micros,
        tenant: TenantId,
        direction: Direction,
        key: String,
        outcome: Outcome,
    },
    Scan {
        at: Micros,
        tenant: TenantId,
        mismatches: usize,
    },
    /// A super-cluster event that maps to no registered tenant.
    Foreign { at: Micros, key: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    CrossTenant {
        origin: TenantId,
        target: TenantId,
        key: String,
    },
    UnprefixedSuperWrite {
        origin: TenantId,
        key: String,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::CrossTenant {
                origin,
                target,
                key,
            } => {
                write!(f, "object of {origin} written into {target}: {key}")
            }
            Violation::UnprefixedSuperWrite { origin, key } => {
                write!(f, "object of {origin} written outside its prefix: {key}")
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct AuditSummary {
    pub writes: u64,
    pub tenant_writes: u64,
    pub super_writes: u64,
    pub reconciles: u64,
    pub scans: u64,
    pub foreign: u64,
    pub violations: u64,
}

#[derive(Debug, Default)]
pub struct AuditLog {
    entries: Mutex<Vec<AuditEntry>>,
}

impl AuditLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn record(&self, entry: AuditEntry) {
        self.entries.lock().push(entry);
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn write(
        &self,
        at: Micros,
        origin: &TenantId,
        origin_prefix: &str,
        target: WriteTarget,
        op: WriteOp,
        key: &ObjectKey,
        ok: bool,
    ) {
        self.record(AuditEntry::Write {
            at,
            origin: origin.clone(),
            origin_prefix: origin_prefix.to_string(),
            target,
            op,
            key: key_text(key),
            ok,
        });
    }

    pub fn entries(&self) -> Vec<AuditEntry> {
        self.entries.lock().clone()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes that crossed a tenant boundary or escaped the origin's prefix.
    pub fn violations(&self) -> Vec<Violation> {
        let entries = self.entries.lock();
        entries
            .iter()
            .filter_map(|e| match e {
                AuditEntry::Write {
                    origin,
                    origin_prefix,
                    target,
                    key,
                    ..
                } => match target {
                    WriteTarget::Tenant(t) if t != origin => Some(Violation::CrossTenant {
                        origin: origin.clone(),
                        target: t.clone(),
                        key: key.clone(),
                    }),
                    WriteTarget::Super
                        if !scope_of_text(key).starts_with(origin_prefix.as_str()) =>
                    {
                        Some(Violation::UnprefixedSuperWrite {
                            origin: origin.clone(),
                            key: key.clone(),
                        })
                    }
                    _ => None,
                },
                _ => None,
            })
            .collect()
    }

    pub fn summary(&self) -> AuditSummary {
        let mut s = AuditSummary::default();
        for e in self.entries.lock().iter() {
            match e {
                AuditEntry::Write { target, .. } => {
                    s.writes += 1;
                    match target {
                        WriteTarget::Tenant(_) => s.tenant_writes += 1,
                        WriteTarget::Super => s.super_writes += 1,
                    }
                }
                AuditEntry::Reconcile { .. } => s.reconciles += 1,
                AuditEntry::Scan { .. } => s.scans += 1,
                AuditEntry::Foreign { .. } => s.foreign += 1,
            }
        }
        s.violations = self.violations().len() as u64;
        s
    }

    /// One JSON object per line.
    pub fn write_lines(&self, out: &mut impl Write) -> io::Result<()> {
        for e in self.entries.lock().iter() {
            serde_json::to_writer(&mut *out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

fn key_text(key: &ObjectKey) -> String {
    format!("{}/{}/{}", key.kind, key.namespace, key.name)
}

/// Inverse of the `kind/namespace/name` form for scope checks.
fn scope_of_text(key: &str) -> &str {
    let mut parts = key.splitn(3, '/');
    let _kind = parts.next();
    let ns = parts.next().unwrap_or("");
    let name = parts.next().unwrap_or("");
    if ns.is_empty() {
        name
    } else {
        ns
    }
}
