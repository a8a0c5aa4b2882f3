//! Executes lowered modules on the host and simulated accelerators.
//!
//! Top-level ops run in order on the calling thread. Each run of
//! consecutive lowered loops sharing a group id is dispatched to the
//! devices' worker pools and joined before the next op. Accelerators are
//! host thread pools; their per-call, per-byte and per-allocation costs
//! are added to the reported times rather than slept.
//!
//! A `dev.launch` with `shared=false` copies the partition of every host
//! buffer it touches into the accelerator's arena, runs, and copies the
//! `outs` partitions back. Partitions are indexed by the global induction
//! variable: iteration `i` owns elements `[i * c, (i + 1) * c)` of a
//! buffer holding `c` elements per iteration.

pub mod arena;
pub mod buffer;
mod pools;

use std::collections::BTreeMap;
use std::sync::atomic::Ordering::Relaxed;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use hetoc_core::crypto::{self, HashAlg};
use hetoc_core::hir::{attr, Attr, Block, HirFunction, HirModule, HirOp, HirType, MemSpace, Opcode, RmwKind, ScalarKind, SourceSpan, ValueId};
use hetoc_core::interp::{Data, Outcome};
use hetoc_core::passes::loop_groups;
use hetoc_core::{verify, DeviceSpec, DeviceTable};

pub use arena::Arena;
pub use buffer::{RtBuffer, View};

/// How the loops of one group share the machine.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Overlap {
    /// Devices run at the same time; their measured times include any
    /// contention for host cores.
    #[default]
    Concurrent,
    /// Devices run one after another and the group takes as long as the
    /// slowest one, as if each had the machine to itself.
    Isolated,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ExecOptions {
    /// Split launches that do not fit in the accelerator arena.
    pub batching: bool,
    pub overlap: Overlap,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct DeviceReport {
    pub id: String,
    /// `compute_s + simulated_s`.
    pub wall_s: f64,
    /// Measured time of this device's loops, staging included.
    pub compute_s: f64,
    /// Injected launch, copy and allocation latencies.
    pub simulated_s: f64,
    pub launches: u64,
    pub batches: u64,
    pub bytes_to_device: u64,
    pub bytes_from_device: u64,
    pub peak_bytes: u64,
    /// Bytes still allocated at exit and released by the runtime.
    pub reclaimed_bytes: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExecReport {
    /// Critical-path time: top-level ops in sequence, each loop group as
    /// long as its slowest device.
    pub wall_s: f64,
    /// Real elapsed time of the whole call.
    pub elapsed_s: f64,
    pub devices: Vec<DeviceReport>,
    #[serde(skip)]
    pub outputs: Outcome,
}

impl ExecReport {
    pub fn device(&self, id: &str) -> Option<&DeviceReport> {
        self.devices.iter().find(|d| d.id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExecError {
    #[error("module has no main function")]
    NoMain,
    #[error("module is invalid: {0}")]
    Invalid(String),
    #[error("module is not fully lowered: found {0}")]
    NotLowered(Opcode),
    #[error("missing input `{0}`")]
    MissingInput(String),
    #[error("input `{name}` does not match parameter type {expected}")]
    InputMismatch { name: String, expected: HirType },
    #[error("unknown device `{0}`")]
    UnknownDevice(String),
    #[error("{}{opcode}: index {index} out of bounds for length {len}", loc(.span))]
    OutOfBounds {
        opcode: Opcode,
        index: i64,
        len: usize,
        span: Option<SourceSpan>,
    },
    #[error("{}{opcode}: buffer used after dealloc", loc(.span))]
    Freed { opcode: Opcode, span: Option<SourceSpan> },
    #[error("{}{opcode}: {message}", loc(.span))]
    Op {
        opcode: Opcode,
        message: String,
        span: Option<SourceSpan>,
    },
    #[error("arena of `{device}` is full: {requested} bytes requested, {available} available")]
    ArenaFull {
        device: String,
        requested: u64,
        available: u64,
    },
    #[error("one element needs {bytes} bytes but `{device}` has {available} available")]
    Unsatisfiable { device: String, bytes: u64, available: u64 },
}

fn loc(span: &Option<SourceSpan>) -> String {
    match span {
        Some(s) => format!("{}:{}: ", s.line, s.column),
        None => String::new(),
    }
}

fn op_error(op: &HirOp, message: impl Into<String>) -> ExecError {
    ExecError::Op {
        opcode: op.opcode,
        message: message.into(),
        span: op.span,
    }
}

#[derive(Clone)]
enum Slot {
    Undef,
    Scalar(i64),
    Buf(View),
}

/// Runs `main` without batching; launches that exceed an arena fail.
pub fn execute(module: &HirModule, devices: &DeviceTable, inputs: &BTreeMap<String, Data>) -> Result<ExecReport, ExecError> {
    execute_with(module, devices, inputs, ExecOptions::default())
}

/// Runs `main`, splitting launches that exceed an arena into sequential
/// sub-batches that each fill the available capacity.
pub fn execute_batched(
    module: &HirModule,
    devices: &DeviceTable,
    inputs: &BTreeMap<String, Data>,
) -> Result<ExecReport, ExecError> {
    execute_with(
        module,
        devices,
        inputs,
        ExecOptions {
            batching: true,
            ..ExecOptions::default()
        },
    )
}

pub fn execute_with(
    module: &HirModule,
    devices: &DeviceTable,
    inputs: &BTreeMap<String, Data>,
    opts: ExecOptions,
) -> Result<ExecReport, ExecError> {
    let started = Instant::now();
    if let Some(d) = verify(module).first() {
        return Err(ExecError::Invalid(d.to_string()));
    }
    let main = module.main().ok_or(ExecError::NoMain)?;
    let mut pending = None;
    main.body.walk(&mut |op| {
        if matches!(
            op.opcode,
            Opcode::HyperFor | Opcode::HyperReduce | Opcode::CryptoHashBatch
        ) {
            pending.get_or_insert(op.opcode);
        }
    });
    if let Some(op) = pending {
        return Err(ExecError::NotLowered(op));
    }
    let specs: Vec<&DeviceSpec> = devices.iter().collect();
    let engine = Engine {
        table: devices,
        arenas: specs.iter().map(|s| Arena::new(s.id.clone(), s.mem_bytes)).collect(),
        pools: specs.iter().map(|s| pools::pool(&s.id, s.threads as usize)).collect(),
        specs,
        opts,
        allocs: Mutex::new(Vec::new()),
    };
    engine.run(main, inputs, started)
}

#[derive(Default, Clone)]
struct Stats {
    compute_s: f64,
    simulated_s: f64,
    launches: u64,
    batches: u64,
    bytes_in: u64,
    bytes_out: u64,
}

struct Engine<'a> {
    table: &'a DeviceTable,
    specs: Vec<&'a DeviceSpec>,
    arenas: Vec<Arena>,
    pools: Vec<Arc<rayon::ThreadPool>>,
    opts: ExecOptions,
    /// Every buffer allocated by the program, for reclamation at exit.
    allocs: Mutex<Vec<Arc<RtBuffer>>>,
}

impl Engine<'_> {
    fn device_index(&self, id: &str) -> Result<usize, ExecError> {
        if self.table.is_host(id) {
            return Ok(0);
        }
        self.specs
            .iter()
            .position(|s| s.id == id)
            .ok_or_else(|| ExecError::UnknownDevice(id.to_string()))
    }

    fn arena_of(&self, space: &MemSpace) -> Result<usize, ExecError> {
        self.device_index(space.as_str())
    }

    fn alloc(&self, ty: &HirType, op: Option<&HirOp>) -> Result<Arc<RtBuffer>, ExecError> {
        let HirType::Buffer { elem, len, space } = ty else {
            return Err(match op {
                Some(op) => op_error(op, "allocation of a non-buffer type"),
                None => ExecError::Invalid("allocation of a non-buffer type".to_string()),
            });
        };
        let dev = self.arena_of(space)?;
        let buf = Arc::new(RtBuffer::zeroed(*elem, *len as usize, dev));
        self.reserve(dev, buf.byte_size())?;
        self.allocs.lock().unwrap().push(buf.clone());
        Ok(buf)
    }

    fn reserve(&self, dev: usize, bytes: u64) -> Result<(), ExecError> {
        self.arenas[dev].alloc(bytes).map_err(|f| ExecError::ArenaFull {
            device: self.specs[dev].id.clone(),
            requested: f.requested,
            available: f.available,
        })
    }

    fn free(&self, buf: &RtBuffer, op: &HirOp) -> Result<(), ExecError> {
        if buf.freed.swap(true, Relaxed) {
            return Err(ExecError::Freed {
                opcode: op.opcode,
                span: op.span,
            });
        }
        self.arenas[buf.device].free(buf.byte_size());
        Ok(())
    }

    fn run(&self, main: &HirFunction, inputs: &BTreeMap<String, Data>, started: Instant) -> Result<ExecReport, ExecError> {
        let mut env = vec![Slot::Undef; main.value_count() as usize];
        // Parameter buffers belong to the caller and are not reclaimed.
        let mut params = Vec::new();
        for (a, name) in main.body.args.iter().zip(&main.arg_names) {
            let input = inputs.get(name).ok_or_else(|| ExecError::MissingInput(name.clone()))?;
            let mismatch = || ExecError::InputMismatch {
                name: name.clone(),
                expected: a.ty.clone(),
            };
            env[a.id.0 as usize] = match (&a.ty, input) {
                (HirType::Scalar(k), Data::Scalar(k2, v)) if k == k2 => Slot::Scalar(k.wrap(*v)),
                (HirType::Buffer { elem, len, space }, Data::Buffer(b)) if *elem == b.elem && *len as usize == b.data.len() => {
                    let dev = self.arena_of(space)?;
                    let buf = Arc::new(RtBuffer::from_buffer(b, dev));
                    self.reserve(dev, buf.byte_size())?;
                    params.push(buf.clone());
                    Slot::Buf(View::whole(buf))
                }
                _ => return Err(mismatch()),
            };
        }

        let mut stats = vec![Stats::default(); self.specs.len()];
        let mut wall = 0.0;
        let ops = &main.body.ops;
        let groups = loop_groups(&main.body);
        let mut returned = Vec::new();
        let mut i = 0;
        while i < ops.len() {
            if let Some(&(s, e)) = groups.iter().find(|g| g.0 == i) {
                wall += self.run_group(&ops[s..e], &env, &mut stats)?;
                i = e;
                continue;
            }
            let op = &ops[i];
            if op.opcode == Opcode::Return {
                returned = op.operands.clone();
                break;
            }
            let t0 = Instant::now();
            let sim = self.top_op(op, &mut env, &mut stats)?;
            wall += t0.elapsed().as_secs_f64() + sim;
            i += 1;
        }

        let types = main.value_types();
        let mut outputs = Outcome::default();
        for id in returned {
            outputs.returns.push(read_data(&env, id, &types)?);
        }
        for (a, name) in main.body.args.iter().zip(&main.arg_names) {
            if a.ty.is_buffer() {
                outputs.args.push((name.clone(), read_data(&env, a.id, &types)?));
            }
        }

        for buf in params {
            if !buf.freed.swap(true, Relaxed) {
                self.arenas[buf.device].free(buf.byte_size());
            }
        }
        let mut reclaimed = vec![0u64; self.specs.len()];
        for buf in self.allocs.lock().unwrap().drain(..) {
            if !buf.freed.swap(true, Relaxed) {
                self.arenas[buf.device].free(buf.byte_size());
                reclaimed[buf.device] += buf.byte_size();
            }
        }
        let devices = self
            .specs
            .iter()
            .zip(&stats)
            .enumerate()
            .map(|(d, (spec, s))| DeviceReport {
                id: spec.id.clone(),
                wall_s: s.compute_s + s.simulated_s,
                compute_s: s.compute_s,
                simulated_s: s.simulated_s,
                launches: s.launches,
                batches: s.batches,
                bytes_to_device: s.bytes_in,
                bytes_from_device: s.bytes_out,
                peak_bytes: self.arenas[d].peak(),
                reclaimed_bytes: reclaimed[d],
            })
            .collect();
        Ok(ExecReport {
            wall_s: wall,
            elapsed_s: started.elapsed().as_secs_f64(),
            devices,
            outputs,
        })
    }

    /// Runs one top-level op and returns the latency it injects.
    fn top_op(&self, op: &HirOp, env: &mut [Slot], stats: &mut [Stats]) -> Result<f64, ExecError> {
        match op.opcode {
            Opcode::HyperAlloc => {
                let r = &op.results[0];
                let buf = self.alloc(&r.ty, Some(op))?;
                let dev = buf.device;
                env[r.id.0 as usize] = Slot::Buf(View::whole(buf));
                let sim = self.specs[dev].per_alloc_us * 1e-6;
                stats[dev].simulated_s += sim;
                Ok(sim)
            }
            Opcode::HyperMemcpy => {
                let src = view(env, op, op.operands[0])?;
                let dst = view(env, op, op.operands[1])?;
                copy_whole(op, &src, &dst)?;
                let bytes = src.buf.byte_size();
                let mut sim = 0.0;
                if dst.buf.device != 0 {
                    let t = self.specs[dst.buf.device].per_byte_copy_ns * 1e-9 * bytes as f64;
                    stats[dst.buf.device].simulated_s += t;
                    stats[dst.buf.device].bytes_in += bytes;
                    sim += t;
                }
                if src.buf.device != 0 {
                    let t = self.specs[src.buf.device].per_byte_copy_ns * 1e-9 * bytes as f64;
                    stats[src.buf.device].simulated_s += t;
                    stats[src.buf.device].bytes_out += bytes;
                    sim += t;
                }
                Ok(sim)
            }
            _ => {
                self.eval(op, env)?;
                Ok(0.0)
            }
        }
    }

    /// Runs a concurrent group and returns its critical-path time.
    fn run_group(&self, loops: &[HirOp], env: &[Slot], stats: &mut [Stats]) -> Result<f64, ExecError> {
        let results: Vec<Result<(usize, Stats), ExecError>> = match self.opts.overlap {
            Overlap::Isolated => loops.iter().map(|op| self.run_task(op, env)).collect(),
            Overlap::Concurrent => std::thread::scope(|s| {
                let handles: Vec<_> = loops.iter().map(|op| s.spawn(move || self.run_task(op, env))).collect();
                handles.into_iter().map(|h| h.join().expect("device task panicked")).collect()
            }),
        };
        let mut longest: f64 = 0.0;
        for r in results {
            let (dev, s) = r?;
            longest = longest.max(s.compute_s + s.simulated_s);
            let t = &mut stats[dev];
            t.compute_s += s.compute_s;
            t.simulated_s += s.simulated_s;
            t.launches += s.launches;
            t.batches += s.batches;
            t.bytes_in += s.bytes_in;
            t.bytes_out += s.bytes_out;
        }
        Ok(longest)
    }

    fn run_task(&self, op: &HirOp, env: &[Slot]) -> Result<(usize, Stats), ExecError> {
        let started = Instant::now();
        let dev = self.device_index(op.attr_str(attr::DEVICE).unwrap_or_default())?;
        let spec = self.specs[dev];
        let overhead = spec.per_call_overhead_us * 1e-6;
        let (lb, ub) = op.bounds().ok_or_else(|| op_error(op, "loop without bounds"))?;
        let mut st = Stats {
            launches: 1,
            ..Stats::default()
        };
        let shared = op.attr_bool(attr::SHARED).unwrap_or(true);
        if op.opcode == Opcode::ParLoop || shared {
            st.simulated_s += overhead;
            st.batches = u64::from(ub > lb);
            self.par_range(dev, op, env, lb, ub, &[])?;
            st.compute_s = started.elapsed().as_secs_f64();
            return Ok((dev, st));
        }

        // Partitioned launch: stage every buffer that lives elsewhere.
        let n = ub.max(0) as u64;
        let base = op.attr_int(attr::BASE).unwrap_or(0);
        let trip = (op.attr_int(attr::SPACE_UB).unwrap_or(0) - op.attr_int(attr::SPACE_LB).unwrap_or(0)).max(1) as usize;
        let outs = op.outs();
        let mut staged: Vec<(ValueId, View, usize, bool)> = Vec::new();
        for &id in &op.operands {
            if staged.iter().any(|s| s.0 == id) {
                continue;
            }
            let v = view(env, op, id)?;
            if v.buf.device != dev {
                let chunk = v.buf.len() / trip;
                staged.push((id, v, chunk, outs.contains(&id)));
            }
        }
        let per_elem: u64 = staged.iter().map(|(_, v, c, _)| (c * v.buf.elem().byte_width()) as u64).sum();
        let available = self.arenas[dev].available();
        let per_batch = available.checked_div(per_elem).unwrap_or(n.max(1));
        if n * per_elem > available {
            if !self.opts.batching {
                return Err(ExecError::ArenaFull {
                    device: spec.id.clone(),
                    requested: n * per_elem,
                    available,
                });
            }
            if per_batch == 0 {
                return Err(ExecError::Unsatisfiable {
                    device: spec.id.clone(),
                    bytes: per_elem,
                    available,
                });
            }
        }
        let batches = if n == 0 { 0 } else { n.div_ceil(per_batch) };
        st.batches = batches;
        st.launches = batches.max(1);
        if batches == 0 {
            st.simulated_s += overhead;
        }
        for b in 0..batches {
            let t0 = b * per_batch;
            let t1 = n.min(t0 + per_batch);
            st.simulated_s += overhead;
            let mut overrides = Vec::with_capacity(staged.len());
            let mut windows = Vec::with_capacity(staged.len());
            for (id, host, chunk, _) in &staged {
                let lo = ((base as u64 + t0) as usize * chunk).min(host.buf.len());
                let hi = ((base as u64 + t1) as usize * chunk).min(host.buf.len());
                let part = Arc::new(RtBuffer::zeroed(host.buf.elem(), hi - lo, dev));
                let bytes = part.byte_size();
                self.reserve(dev, bytes)?;
                st.simulated_s += spec.per_alloc_us * 1e-6;
                part.copy_from(0, &host.buf, lo, hi - lo);
                st.bytes_in += bytes;
                st.simulated_s += spec.per_byte_copy_ns * 1e-9 * bytes as f64;
                overrides.push((
                    *id,
                    Slot::Buf(View {
                        buf: part.clone(),
                        lo: lo as i64,
                        global_len: host.global_len,
                    }),
                ));
                windows.push((part, lo));
            }
            let run = self.par_range(dev, op, env, t0 as i64, t1 as i64, &overrides);
            for ((part, lo), (_, host, _, is_out)) in windows.iter().zip(&staged) {
                if *is_out && run.is_ok() {
                    host.buf.copy_from(*lo, part, 0, part.len());
                    st.bytes_out += part.byte_size();
                    st.simulated_s += spec.per_byte_copy_ns * 1e-9 * part.byte_size() as f64;
                }
                self.arenas[dev].free(part.byte_size());
            }
            run?;
        }
        st.compute_s = started.elapsed().as_secs_f64();
        Ok((dev, st))
    }

    /// Runs iterations `[t0, t1)` of a loop on device `dev`'s pool.
    fn par_range(&self, dev: usize, op: &HirOp, env: &[Slot], t0: i64, t1: i64, overrides: &[(ValueId, Slot)]) -> Result<(), ExecError> {
        if t1 <= t0 {
            return Ok(());
        }
        let body = op.body().ok_or_else(|| op_error(op, "loop without a body"))?;
        let iv = body.args[0].id.0 as usize;
        let mut base_env = env.to_vec();
        for (id, slot) in overrides {
            base_env[id.0 as usize] = slot.clone();
        }
        let pool = &self.pools[dev];
        let n = (t1 - t0) as usize;
        let grain = (n / (pool.current_num_threads() * 8)).max(1);
        pool.install(|| {
            (0..n)
                .into_par_iter()
                .with_min_len(grain)
                .try_for_each_init(
                    || base_env.clone(),
                    |env, k| {
                        env[iv] = Slot::Scalar(t0 + k as i64);
                        self.block(body, env)
                    },
                )
        })
    }

    fn block(&self, block: &Block, env: &mut [Slot]) -> Result<(), ExecError> {
        for op in &block.ops {
            if op.opcode == Opcode::Yield {
                break;
            }
            self.eval(op, env)?;
        }
        Ok(())
    }

    /// Runs a loop nested inside a loop body serially on the current thread.
    fn nested_loop(&self, op: &HirOp, env: &mut [Slot]) -> Result<(), ExecError> {
        let (lb, ub) = op.bounds().ok_or_else(|| op_error(op, "loop without bounds"))?;
        let body = op.body().ok_or_else(|| op_error(op, "loop without a body"))?;
        let iv = body.args[0].id.0 as usize;
        for i in lb..ub {
            env[iv] = Slot::Scalar(i);
            self.block(body, env)?;
        }
        Ok(())
    }

    fn eval(&self, op: &HirOp, env: &mut [Slot]) -> Result<(), ExecError> {
        let o = &op.operands;
        let set = |env: &mut [Slot], v: i64| {
            let r = &op.results[0];
            let k = r.ty.scalar().unwrap_or(ScalarKind::I64);
            env[r.id.0 as usize] = Slot::Scalar(k.wrap(v));
        };
        match op.opcode {
            Opcode::Const => {
                let v = match op.attrs.get(attr::VALUE) {
                    Some(Attr::Int(v)) => *v,
                    Some(Attr::Float(f)) => f.to_bits() as i64,
                    _ => return Err(op_error(op, "const without a value")),
                };
                set(env, v);
            }
            Opcode::AddI => {
                let v = scalar(env, op, o[0])?.wrapping_add(scalar(env, op, o[1])?);
                set(env, v);
            }
            Opcode::MulI => {
                let v = scalar(env, op, o[0])?.wrapping_mul(scalar(env, op, o[1])?);
                set(env, v);
            }
            Opcode::Load => {
                let (b, p) = element(env, op, o[0], o[1])?;
                set(env, b.buf.load(p));
            }
            Opcode::Store => {
                let v = scalar(env, op, o[0])?;
                let (b, p) = element(env, op, o[1], o[2])?;
                b.buf.store(p, v);
            }
            Opcode::AtomicRmw if o.len() == 3 => {
                let kind = op
                    .attr_str(attr::KIND)
                    .and_then(RmwKind::from_name)
                    .ok_or_else(|| op_error(op, "unknown atomic_rmw kind"))?;
                let v = scalar(env, op, o[0])?;
                let (b, p) = element(env, op, o[1], o[2])?;
                b.buf.rmw(kind, p, v);
            }
            Opcode::CryptoDigest => self.digest(op, env)?,
            Opcode::MemrefAlloc | Opcode::HyperAlloc => {
                let r = &op.results[0];
                let buf = self.alloc(&r.ty, Some(op))?;
                env[r.id.0 as usize] = Slot::Buf(View::whole(buf));
            }
            Opcode::MemrefDealloc | Opcode::HyperDealloc => {
                let v = view(env, op, o[0])?;
                self.free(&v.buf, op)?;
            }
            Opcode::MemrefCopy | Opcode::HyperMemcpy => {
                let src = view(env, op, o[0])?;
                let dst = view(env, op, o[1])?;
                copy_whole(op, &src, &dst)?;
            }
            Opcode::ParLoop | Opcode::DevLaunch => self.nested_loop(op, env)?,
            Opcode::Yield => {}
            Opcode::AtomicRmw | Opcode::HyperFor | Opcode::HyperReduce | Opcode::HyperReduceReturn | Opcode::CryptoHashBatch => {
                return Err(ExecError::NotLowered(op.opcode))
            }
            Opcode::Return => return Err(op_error(op, "return inside a loop body")),
        }
        Ok(())
    }

    fn digest(&self, op: &HirOp, env: &mut [Slot]) -> Result<(), ExecError> {
        let name = op.attr_str(attr::ALG).unwrap_or_default();
        let alg = HashAlg::from_name(name).ok_or_else(|| op_error(op, format!("unknown hash algorithm {name:?}")))?;
        let msg_len = op.attr_int(attr::MSG_LEN).unwrap_or(0).max(1) as usize;
        let dlen = alg.digest_len();
        let msgs = view(env, op, op.operands[0])?;
        let out = view(env, op, op.operands[1])?;
        let i = scalar(env, op, op.operands[2])?;
        let range = |v: &View, start: i64, n: usize| -> Result<usize, ExecError> {
            let oob = |index| ExecError::OutOfBounds {
                opcode: op.opcode,
                index,
                len: v.global_len,
                span: op.span,
            };
            let first = v.pos(start).ok_or_else(|| oob(start))?;
            let last = start + n as i64 - 1;
            v.pos(last).ok_or_else(|| oob(last))?;
            Ok(first)
        };
        let m = range(&msgs, i * msg_len as i64, msg_len)?;
        let d = range(&out, i * dlen as i64, dlen)?;
        let mut stack = [0u8; 64];
        let mut heap = Vec::new();
        let msg: &mut [u8] = if msg_len <= stack.len() {
            &mut stack[..msg_len]
        } else {
            heap.resize(msg_len, 0);
            &mut heap
        };
        msgs.buf.read_bytes(m, msg);
        let mut digest = [0u8; 32];
        if alg == HashAlg::Sha1 && op.attr_str(attr::VARIANT) == Some("accel") {
            crypto::sha1_accel_into(msg, &mut digest);
        } else {
            crypto::digest_into(alg, msg, &mut digest);
        }
        out.buf.write_bytes(d, &digest[..dlen]);
        Ok(())
    }
}

fn scalar(env: &[Slot], op: &HirOp, id: ValueId) -> Result<i64, ExecError> {
    match env.get(id.0 as usize) {
        Some(Slot::Scalar(v)) => Ok(*v),
        _ => Err(op_error(op, format!("{id} is not a defined scalar"))),
    }
}

fn view(env: &[Slot], op: &HirOp, id: ValueId) -> Result<View, ExecError> {
    match env.get(id.0 as usize) {
        Some(Slot::Buf(v)) => Ok(v.clone()),
        _ => Err(op_error(op, format!("{id} is not a defined buffer"))),
    }
}

fn element<'e>(env: &'e [Slot], op: &HirOp, buf: ValueId, idx: ValueId) -> Result<(&'e View, usize), ExecError> {
    let j = scalar(env, op, idx)?;
    let Some(Slot::Buf(v)) = env.get(buf.0 as usize) else {
        return Err(op_error(op, format!("{buf} is not a defined buffer")));
    };
    let p = v.pos(j).ok_or(ExecError::OutOfBounds {
        opcode: op.opcode,
        index: j,
        len: v.global_len,
        span: op.span,
    })?;
    Ok((v, p))
}

fn copy_whole(op: &HirOp, src: &View, dst: &View) -> Result<(), ExecError> {
    if src.buf.len() != dst.buf.len() {
        return Err(op_error(op, "copy between buffers of different length"));
    }
    if src.buf.freed.load(Relaxed) || dst.buf.freed.load(Relaxed) {
        return Err(ExecError::Freed {
            opcode: op.opcode,
            span: op.span,
        });
    }
    dst.buf.copy_from(0, &src.buf, 0, src.buf.len());
    Ok(())
}

fn read_data(env: &[Slot], id: ValueId, types: &BTreeMap<ValueId, HirType>) -> Result<Data, ExecError> {
    match (env.get(id.0 as usize), types.get(&id)) {
        (Some(Slot::Scalar(v)), Some(HirType::Scalar(k))) => Ok(Data::Scalar(*k, *v)),
        (Some(Slot::Buf(v)), _) => Ok(Data::Buffer(v.buf.snapshot())),
        _ => Err(ExecError::Invalid(format!("returned value {id} is undefined"))),
    }
}
