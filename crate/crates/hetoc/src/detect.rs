//! Device discovery: the host comes from the machine, simulated
//! accelerators from a JSON file.
//!
//! ```json
//! {"devices":[{"id":"acc:0","kind":"simulated_accel","threads":64,
//!   "mem_bytes":8589934592,"per_call_overhead_us":200,
//!   "per_byte_copy_ns":0.10,"per_alloc_us":50,"host_mapped":false}]}
//! ```
//!
//! An entry with `"kind":"host"` overrides the detected host's `threads`
//! and `sha_accel`.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use serde_json::{Map, Value};
use thiserror::Error;

use hetoc_core::crypto::sha1_accel_available;
use hetoc_core::device::{DeviceError, DeviceKind, DeviceSpec, DeviceTable};

/// Environment variable naming the device config file.
pub const DEVICES_ENV: &str = "HETOC_DEVICES";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read device config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("device config is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("device config has invalid keys: {}", .0.join(", "))]
    InvalidKeys(Vec<String>),
    #[error(transparent)]
    Device(#[from] DeviceError),
}

/// The machine's host: one worker per logical core.
pub fn host_spec() -> DeviceSpec {
    let threads = std::thread::available_parallelism().map(|n| n.get() as u32).unwrap_or(1);
    DeviceSpec::host(threads, sha1_accel_available())
}

fn check_entry(k: usize, obj: &Map<String, Value>, bad: &mut Vec<String>) -> Option<DeviceSpec> {
    let key = |name: &str| format!("devices[{k}].{name}");
    let kind = match obj.get("kind").and_then(Value::as_str).and_then(DeviceKind::from_name) {
        Some(kind) => kind,
        None => {
            bad.push(key("kind"));
            return None;
        }
    };
    let mut spec = match kind {
        DeviceKind::Host => host_spec(),
        DeviceKind::SimulatedAccel => DeviceSpec::simulated("", 1, 1),
    };
    let before = bad.len();
    for (name, v) in obj {
        let ok = match name.as_str() {
            "kind" => true,
            "id" => match v.as_str() {
                Some(s) if !s.is_empty() => {
                    spec.id = s.to_string();
                    true
                }
                _ => false,
            },
            "threads" => match v.as_u64() {
                Some(n) if n >= 1 && n <= u32::MAX as u64 => {
                    spec.threads = n as u32;
                    true
                }
                _ => false,
            },
            "mem_bytes" => match v.as_u64() {
                Some(n) if n > 0 => {
                    spec.mem_bytes = n;
                    true
                }
                _ => false,
            },
            "per_call_overhead_us" | "per_byte_copy_ns" | "per_alloc_us" => match v.as_f64() {
                Some(x) if x >= 0.0 && x.is_finite() => {
                    match name.as_str() {
                        "per_call_overhead_us" => spec.per_call_overhead_us = x,
                        "per_byte_copy_ns" => spec.per_byte_copy_ns = x,
                        _ => spec.per_alloc_us = x,
                    }
                    true
                }
                _ => false,
            },
            "host_mapped" | "sha_accel" => match v.as_bool() {
                Some(b) => {
                    if name == "host_mapped" {
                        spec.host_mapped = b;
                    } else {
                        spec.sha_accel = b;
                    }
                    true
                }
                None => false,
            },
            _ => false,
        };
        if !ok {
            bad.push(key(name));
        }
    }
    if kind == DeviceKind::SimulatedAccel {
        for required in ["id", "threads", "mem_bytes"] {
            if !obj.contains_key(required) {
                bad.push(key(required));
            }
        }
    }
    (bad.len() == before).then_some(spec)
}

/// Builds a device table from config text. Every offending key is
/// reported, not just the first.
pub fn parse_config(text: &str, host: DeviceSpec) -> Result<DeviceTable, ConfigError> {
    let root: Value = serde_json::from_str(text)?;
    let mut bad = Vec::new();
    let Some(root) = root.as_object() else {
        return Err(ConfigError::InvalidKeys(vec!["<root>".to_string()]));
    };
    for k in root.keys().filter(|k| *k != "devices") {
        bad.push(k.clone());
    }
    let entries = match root.get("devices") {
        Some(Value::Array(a)) => a.as_slice(),
        Some(_) => {
            bad.push("devices".to_string());
            &[]
        }
        None => &[],
    };
    let mut host = host;
    let mut accels = Vec::new();
    for (k, e) in entries.iter().enumerate() {
        let Some(obj) = e.as_object() else {
            bad.push(format!("devices[{k}]"));
            continue;
        };
        if let Some(spec) = check_entry(k, obj, &mut bad) {
            if spec.kind == DeviceKind::Host {
                host.threads = spec.threads;
                host.sha_accel = spec.sha_accel;
            } else {
                accels.push(spec);
            }
        }
    }
    if !bad.is_empty() {
        return Err(ConfigError::InvalidKeys(bad));
    }
    Ok(DeviceTable::new(host, accels)?)
}

pub fn load_config(path: &Path, host: DeviceSpec) -> Result<DeviceTable, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text, host)
}

/// Detects the host and loads accelerators from `config`, or from the file
/// named by `HETOC_DEVICES` when no path is given.
pub fn detect_hardware(config: Option<&Path>) -> Result<DeviceTable, ConfigError> {
    let from_env = std::env::var_os(DEVICES_ENV).filter(|v| !v.is_empty()).map(PathBuf::from);
    match config.map(Path::to_path_buf).or(from_env) {
        Some(path) => load_config(&path, host_spec()),
        None => Ok(DeviceTable::host_only(host_spec())),
    }
}

static DEVICES: OnceLock<Result<DeviceTable, String>> = OnceLock::new();

/// Process-wide device table, detected on first use.
pub fn devices() -> Result<&'static DeviceTable, String> {
    DEVICES
        .get_or_init(|| detect_hardware(None).map_err(|e| e.to_string()))
        .as_ref()
        .map_err(Clone::clone)
}
