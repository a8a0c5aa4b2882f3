//! Execution-time model for splitting a data-parallel loop between the
//! host and one accelerator.
//!
//! `x` is always the host (CPU) share of the work.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PerfModel {
    /// Seconds per message on one host core.
    pub p_cpu: f64,
    pub n_core: u32,
    /// Accelerator compute seconds per message, already divided by its
    /// thread count.
    pub p_gpu_over_nthread: f64,
    /// Allocation seconds per message.
    pub t_alloc: f64,
    /// Transfer seconds per message.
    pub t_memcpy: f64,
    /// Fixed per-invocation seconds.
    pub o_gpu: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("samples are degenerate: every sample has n = {0}")]
    Degenerate(u64),
    #[error("sample ({n}, {t}) is not finite and non-negative")]
    BadSample { n: u64, t: f64 },
    #[error("model has zero total slope; the crossing ratio is undefined")]
    ZeroSlope,
    #[error("step must lie in (0, 1], got {0}")]
    BadStep(f64),
    #[error("n_core must be at least 1")]
    NoCores,
}

impl PerfModel {
    /// Per-message accelerator cost: compute, allocation and transfer.
    pub fn device_slope(&self) -> f64 {
        self.p_gpu_over_nthread + self.t_alloc + self.t_memcpy
    }

    pub fn t_cpu(&self, n_data: u64, x: f64) -> f64 {
        n_data as f64 * self.p_cpu * x / self.n_core as f64
    }

    pub fn t_gpu(&self, n_data: u64, x: f64) -> f64 {
        self.device_slope() * n_data as f64 * (1.0 - x) + self.o_gpu
    }

    pub fn t_opt(&self, n_data: u64, x: f64) -> f64 {
        self.t_cpu(n_data, x).max(self.t_gpu(n_data, x))
    }

    /// Host share at which the two time lines cross, clamped to `[0, 1]`.
    pub fn predict_opt_ratio(&self, n_data: u64) -> Result<f64, ModelError> {
        let a = n_data as f64 * self.p_cpu / self.n_core as f64;
        let b = n_data as f64 * self.device_slope();
        if a + b <= 0.0 {
            return Err(ModelError::ZeroSlope);
        }
        Ok(((b + self.o_gpu) / (a + b)).clamp(0.0, 1.0))
    }

    /// Grid point minimizing `t_opt`; ties go to the smaller ratio.
    pub fn grid_argmin(&self, n_data: u64, step: f64) -> Result<f64, ModelError> {
        let grid = ratio_grid(step)?;
        let mut best = (grid[0], self.t_opt(n_data, grid[0]));
        for &x in &grid[1..] {
            let t = self.t_opt(n_data, x);
            if t < best.1 {
                best = (x, t);
            }
        }
        Ok(best.0)
    }
}

/// The sweep grid `{0, step, 2 step, ..., 1}`.
///
/// When `step` divides 1 the points are computed as `i / k` so that they
/// print exactly (0.02 gives 51 points). Otherwise 1 is appended after the
/// last multiple of `step` below it.
pub fn ratio_grid(step: f64) -> Result<Vec<f64>, ModelError> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(ModelError::BadStep(step));
    }
    let k = (1.0 / step + 0.5) as u64;
    if (k as f64 * step - 1.0).abs() < 1e-9 {
        return Ok((0..=k).map(|i| i as f64 / k as f64).collect());
    }
    let mut out = Vec::new();
    let mut i = 0u64;
    loop {
        let x = i as f64 * step;
        if x >= 1.0 - 1e-9 {
            break;
        }
        out.push(x);
        i += 1;
    }
    out.push(1.0);
    Ok(out)
}

/// Result of [`fit_model`]. Warnings record parameters clamped to zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Fit {
    pub model: PerfModel,
    pub warnings: Vec<String>,
}

fn check_samples(samples: &[(u64, f64)]) -> Result<(), ModelError> {
    if samples.len() < 2 {
        return Err(ModelError::TooFewSamples(samples.len()));
    }
    if let Some(&(n, t)) = samples.iter().find(|(_, t)| !(t.is_finite() && *t >= 0.0)) {
        return Err(ModelError::BadSample { n, t });
    }
    let n0 = samples[0].0;
    if samples.iter().all(|&(n, _)| n == n0) {
        return Err(ModelError::Degenerate(n0));
    }
    Ok(())
}

/// Slope of the least-squares line through the origin.
pub fn fit_through_origin(samples: &[(u64, f64)]) -> Result<f64, ModelError> {
    check_samples(samples)?;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for &(n, t) in samples {
        let x = n as f64;
        sxy += x * t;
        sxx += x * x;
    }
    Ok(sxy / sxx)
}

/// Ordinary least squares; returns `(slope, intercept)`.
pub fn fit_affine(samples: &[(u64, f64)]) -> Result<(f64, f64), ModelError> {
    check_samples(samples)?;
    let len = samples.len() as f64;
    let mean_x = samples.iter().map(|&(n, _)| n as f64).sum::<f64>() / len;
    let mean_y = samples.iter().map(|&(_, t)| t).sum::<f64>() / len;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for &(n, t) in samples {
        let dx = n as f64 - mean_x;
        sxy += dx * (t - mean_y);
        sxx += dx * dx;
    }
    let slope = sxy / sxx;
    Ok((slope, mean_y - slope * mean_x))
}

/// Fits a model from host-only samples (all work at `x = 1`, so
/// `t = n p_cpu / n_core`) and accelerator-only samples taken within one
/// batch regime (`t = slope n + o_gpu`).
///
/// The accelerator slope cannot be split into compute, allocation and
/// transfer from timings alone, so it is stored whole in
/// `p_gpu_over_nthread` and the other two are zero.
pub fn fit_model(
    cpu_samples: &[(u64, f64)],
    dev_samples: &[(u64, f64)],
    n_core: u32,
) -> Result<Fit, ModelError> {
    if n_core == 0 {
        return Err(ModelError::NoCores);
    }
    let mut warnings = Vec::new();
    let mut clamp = |name: &str, v: f64| {
        if v < 0.0 {
            warnings.push(format!("fitted {name} = {v:e} is negative; clamped to 0"));
            0.0
        } else {
            v
        }
    };
    let p_cpu = clamp("p_cpu", fit_through_origin(cpu_samples)? * n_core as f64);
    let (slope, intercept) = fit_affine(dev_samples)?;
    let slope = clamp("device slope", slope);
    let o_gpu = clamp("o_gpu", intercept);
    Ok(Fit {
        model: PerfModel {
            p_cpu,
            n_core,
            p_gpu_over_nthread: slope,
            t_alloc: 0.0,
            t_memcpy: 0.0,
            o_gpu,
        },
        warnings,
    })
}
