//! Duty-ratio sweeps and model calibration on the hashing workload.

use std::io::Write;

use serde::Serialize;

use hetoc_core::crypto::HashAlg;
use hetoc_core::model::{fit_model, ratio_grid, Fit, ModelError};
use hetoc_core::DeviceTable;

use crate::runtime::{execute_with, ExecOptions, ExecReport, Overlap};
use crate::workload::{compile, hash_batch_module, hash_inputs, split};

#[derive(Clone, Debug)]
pub struct SweepConfig {
    pub alg: HashAlg,
    pub count: u64,
    pub step: f64,
    /// Each point keeps the fastest of this many runs.
    pub repeat: u32,
    pub no_sha_accel: bool,
    pub exec: ExecOptions,
}

impl SweepConfig {
    pub fn new(alg: HashAlg, count: u64) -> Self {
        SweepConfig {
            alg,
            count,
            step: 0.02,
            repeat: 1,
            no_sha_accel: false,
            exec: ExecOptions {
                batching: true,
                overlap: Overlap::Isolated,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRecord {
    pub ratio_cpu: f64,
    pub wall_s: f64,
    pub cpu_s: f64,
    pub accel_s: f64,
    pub batches: u64,
    pub n_data: u64,
    pub alg: String,
    /// Set when the point failed; the timing fields are then zero.
    #[serde(skip)]
    pub error: Option<String>,
}

/// Compiles and runs the workload once per grid point, host share first
/// at 0. Failures are recorded on the point and the sweep continues.
pub fn sweep(cfg: &SweepConfig, devices: &DeviceTable) -> Result<Vec<SweepRecord>, ModelError> {
    let grid = ratio_grid(cfg.step)?;
    let accel = devices.accels.first().map(|d| d.id.clone());
    let inputs = hash_inputs(cfg.alg, cfg.count);
    let mut out = Vec::with_capacity(grid.len());
    for x in grid {
        let mut rec = SweepRecord {
            ratio_cpu: x,
            wall_s: 0.0,
            cpu_s: 0.0,
            accel_s: 0.0,
            batches: 0,
            n_data: cfg.count,
            alg: cfg.alg.name().to_string(),
            error: None,
        };
        match run_point(cfg, devices, accel.as_deref(), x, &inputs) {
            Ok(r) => {
                rec.wall_s = r.wall_s;
                rec.cpu_s = r.device(&devices.host.id).map_or(0.0, |d| d.wall_s);
                let accels = r.devices.iter().filter(|d| d.id != devices.host.id);
                for d in accels {
                    rec.accel_s += d.wall_s;
                    rec.batches += d.batches;
                }
            }
            Err(e) => rec.error = Some(e),
        }
        out.push(rec);
    }
    Ok(out)
}

fn run_point(
    cfg: &SweepConfig,
    devices: &DeviceTable,
    accel: Option<&str>,
    x: f64,
    inputs: &std::collections::BTreeMap<String, hetoc_core::interp::Data>,
) -> Result<ExecReport, String> {
    let module = hash_batch_module(cfg.alg, cfg.count, split(devices, accel, x));
    let lowered = compile(&module, devices, cfg.no_sha_accel).map_err(|e| e.to_string())?;
    let mut best: Option<ExecReport> = None;
    for _ in 0..cfg.repeat.max(1) {
        let r = execute_with(&lowered, devices, inputs, cfg.exec).map_err(|e| e.to_string())?;
        if best.as_ref().is_none_or(|b| r.wall_s < b.wall_s) {
            best = Some(r);
        }
    }
    Ok(best.expect("at least one run"))
}

/// The successful record with the smallest wall time.
pub fn argmin(records: &[SweepRecord]) -> Option<&SweepRecord> {
    records
        .iter()
        .filter(|r| r.error.is_none())
        .min_by(|a, b| a.wall_s.total_cmp(&b.wall_s))
}

/// Rounds to 6 significant digits and prints the shortest form.
pub fn sig6(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return v.to_string();
    }
    format!("{v:.5e}").parse::<f64>().expect("float").to_string()
}

/// Writes `ratio_cpu,wall_s,cpu_s,accel_s,batches,n_data,alg`. Failed
/// points have empty timing cells.
pub fn write_csv<W: Write>(records: &[SweepRecord], w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["ratio_cpu", "wall_s", "cpu_s", "accel_s", "batches", "n_data", "alg"])?;
    for r in records {
        let t = |v: f64| if r.error.is_some() { String::new() } else { sig6(v) };
        out.write_record([
            sig6(r.ratio_cpu),
            t(r.wall_s),
            t(r.cpu_s),
            t(r.accel_s),
            r.batches.to_string(),
            r.n_data.to_string(),
            r.alg.clone(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Times host-only and accelerator-only runs at each size and fits the
/// performance model. Device sizes should stay within one batch.
pub fn calibrate(
    alg: HashAlg,
    sizes: &[u64],
    devices: &DeviceTable,
    repeat: u32,
    no_sha_accel: bool,
) -> Result<Fit, String> {
    let accel = devices
        .accels
        .first()
        .map(|d| d.id.clone())
        .ok_or("calibration needs an accelerator")?;
    let mut cpu = Vec::new();
    let mut dev = Vec::new();
    for &n in sizes {
        let cfg = SweepConfig {
            repeat,
            no_sha_accel,
            ..SweepConfig::new(alg, n)
        };
        let inputs = hash_inputs(alg, n);
        let host = run_point(&cfg, devices, Some(&accel), 1.0, &inputs)?;
        cpu.push((n, host.device(&devices.host.id).map_or(0.0, |d| d.wall_s)));
        let acc = run_point(&cfg, devices, Some(&accel), 0.0, &inputs)?;
        dev.push((n, acc.device(&accel).map_or(0.0, |d| d.wall_s)));
    }
    fit_model(&cpu, &dev, devices.host.threads).map_err(|e| e.to_string())
}
