//! Device descriptions shared by the lowering passes and the runtime.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use thiserror::Error;

use crate::hir::MemSpace;

/// Id of the host device. The memory space `host` is an alias for it.
pub const HOST_ID: &str = "cpu:0";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum DeviceKind {
    Host,
    SimulatedAccel,
}

impl DeviceKind {
    pub fn name(self) -> &'static str {
        match self {
            DeviceKind::Host => "host",
            DeviceKind::SimulatedAccel => "simulated_accel",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "host" => Some(DeviceKind::Host),
            "simulated_accel" => Some(DeviceKind::SimulatedAccel),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DeviceSpec {
    pub id: String,
    pub kind: DeviceKind,
    pub threads: u32,
    pub mem_bytes: u64,
    pub per_call_overhead_us: f64,
    pub per_byte_copy_ns: f64,
    pub per_alloc_us: f64,
    pub host_mapped: bool,
    pub sha_accel: bool,
}

impl DeviceSpec {
    /// A host description with zero simulated costs.
    pub fn host(threads: u32, sha_accel: bool) -> Self {
        DeviceSpec {
            id: HOST_ID.to_string(),
            kind: DeviceKind::Host,
            threads,
            mem_bytes: u64::MAX,
            per_call_overhead_us: 0.0,
            per_byte_copy_ns: 0.0,
            per_alloc_us: 0.0,
            host_mapped: true,
            sha_accel,
        }
    }

    pub fn simulated(id: &str, threads: u32, mem_bytes: u64) -> Self {
        DeviceSpec {
            id: id.to_string(),
            kind: DeviceKind::SimulatedAccel,
            threads,
            mem_bytes,
            per_call_overhead_us: 0.0,
            per_byte_copy_ns: 0.0,
            per_alloc_us: 0.0,
            host_mapped: false,
            sha_accel: false,
        }
    }

    pub fn with_costs(mut self, per_call_overhead_us: f64, per_byte_copy_ns: f64, per_alloc_us: f64) -> Self {
        self.per_call_overhead_us = per_call_overhead_us;
        self.per_byte_copy_ns = per_byte_copy_ns;
        self.per_alloc_us = per_alloc_us;
        self
    }

    /// Loops bound to this device run as host `par.loop`s.
    pub fn runs_on_host(&self) -> bool {
        self.kind == DeviceKind::Host || self.host_mapped
    }

    pub fn validate(&self) -> Result<(), DeviceError> {
        let mut bad = Vec::new();
        if self.id.is_empty() {
            bad.push("id");
        }
        if self.threads == 0 {
            bad.push("threads");
        }
        if self.mem_bytes == 0 {
            bad.push("mem_bytes");
        }
        for (name, v) in [
            ("per_call_overhead_us", self.per_call_overhead_us),
            ("per_byte_copy_ns", self.per_byte_copy_ns),
            ("per_alloc_us", self.per_alloc_us),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                bad.push(name);
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(DeviceError::InvalidFields {
                id: self.id.clone(),
                fields: bad.into_iter().map(String::from).collect(),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DeviceError {
    #[error("device `{id}` has invalid fields: {}", fields.join(", "))]
    InvalidFields { id: String, fields: Vec<String> },
    #[error("device id `{0}` is declared more than once")]
    DuplicateId(String),
    #[error("host device must have kind `host`")]
    HostKind,
    #[error("accelerator `{0}` must have kind `simulated_accel`")]
    AccelKind(String),
    #[error("unknown device `{0}`")]
    Unknown(String),
}

/// The host plus any simulated accelerators.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DeviceTable {
    pub host: DeviceSpec,
    pub accels: Vec<DeviceSpec>,
}

impl DeviceTable {
    pub fn new(host: DeviceSpec, accels: Vec<DeviceSpec>) -> Result<Self, DeviceError> {
        let table = DeviceTable { host, accels };
        table.validate()?;
        Ok(table)
    }

    pub fn host_only(host: DeviceSpec) -> Self {
        DeviceTable {
            host,
            accels: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), DeviceError> {
        if self.host.kind != DeviceKind::Host {
            return Err(DeviceError::HostKind);
        }
        self.host.validate()?;
        let mut seen: Vec<&str> = alloc::vec![self.host.id.as_str(), MemSpace::HOST];
        for acc in &self.accels {
            acc.validate()?;
            if acc.kind != DeviceKind::SimulatedAccel {
                return Err(DeviceError::AccelKind(acc.id.clone()));
            }
            if seen.contains(&acc.id.as_str()) {
                return Err(DeviceError::DuplicateId(acc.id.clone()));
            }
            seen.push(&acc.id);
        }
        Ok(())
    }

    /// Looks up a device; `host` resolves to the host entry.
    pub fn get(&self, id: &str) -> Option<&DeviceSpec> {
        if id == MemSpace::HOST || id == self.host.id {
            return Some(&self.host);
        }
        self.accels.iter().find(|d| d.id == id)
    }

    pub fn resolve(&self, id: &str) -> Result<&DeviceSpec, DeviceError> {
        self.get(id).ok_or_else(|| DeviceError::Unknown(id.to_string()))
    }

    pub fn is_host(&self, id: &str) -> bool {
        id == MemSpace::HOST || id == self.host.id
    }

    pub fn iter(&self) -> impl Iterator<Item = &DeviceSpec> {
        core::iter::once(&self.host).chain(&self.accels)
    }

    /// Whether buffers in `space` are eligible for host memory optimization.
    pub fn host_mapped(&self, space: &str) -> bool {
        self.get(space).is_some_and(|d| d.runs_on_host())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn host_alias_resolves() {
        let t = DeviceTable::host_only(DeviceSpec::host(4, false));
        assert_eq!(t.get("host").unwrap().id, HOST_ID);
        assert!(t.get("acc:0").is_none());
    }

    #[test]
    fn rejects_duplicates_and_bad_fields() {
        let acc = DeviceSpec::simulated("acc:0", 4, 1024);
        let t = DeviceTable::new(DeviceSpec::host(1, false), alloc::vec![acc.clone(), acc.clone()]);
        assert_eq!(t, Err(DeviceError::DuplicateId("acc:0".into())));
        let mut bad = acc;
        bad.threads = 0;
        bad.per_byte_copy_ns = -1.0;
        let err = bad.validate().unwrap_err();
        assert_eq!(err.to_string(), "device `acc:0` has invalid fields: threads, per_byte_copy_ns");
    }
}
