//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails, except those that depend on the
//! machine having enough cores; those still print FAIL but are reported
//! as hardware-limited.

#[path = "../../core/tests/common/mod.rs"]
mod programs;

use std::collections::BTreeMap;
use std::panic;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{RngExt, SeedableRng};

use hetoc::runtime::{execute_batched, execute_with, ExecOptions, ExecReport};
use hetoc::sweep::{argmin, calibrate, sweep, SweepConfig};
use hetoc::workload::{compile, digests, hash_batch_module, hash_inputs, split, MSG_WIDTH};
use hetoc_core::crypto::{digest, digest_sha1_accel, gen_messages, hash_batch_serial, sha1_accel_available, HashAlg};
use hetoc_core::hir::{attr, HirType, Opcode, ScalarKind};
use hetoc_core::interp::interpret;
use hetoc_core::model::{ratio_grid, PerfModel};
use hetoc_core::passes::host_mem_opt::remaining_device_nodes;
use hetoc_core::passes::{host_mem_opt, lower_hyper_for, partition_ranges};
use hetoc_core::text::{parse, parse_unverified, print};
use hetoc_core::{verify, DeviceBinding, DeviceSpec, DeviceTable, FunctionBuilder, HirModule};

const HASH_BUDGET: Duration = Duration::from_secs(1);
const COPY_ELIM_BUDGET: Duration = Duration::from_secs(30);
const COPY_ELIM_RANDOM_PROGRAMS: usize = 250;
const INVARIANCE_MESSAGES: u64 = 100_000;
const INVARIANCE_BUDGET: Duration = Duration::from_secs(300);
const TILING_PAIRS: usize = 10_000;
const TILING_BUDGET: Duration = Duration::from_secs(5);
const MODEL_MESSAGES: u64 = 1_000_000;
const MODEL_TOLERANCE: f64 = 0.06;
const MODEL_BUDGET: Duration = Duration::from_secs(600);
const MODEL_REPEAT: u32 = 3;
const SLOPE_OVERHEAD_US: f64 = 200_000.0;
const SLOPE_REPEAT: usize = 3;
const FUZZ_TIME: Duration = Duration::from_secs(60);
const SPEEDUP_MESSAGES: u64 = 1_000_000;
const SPEEDUP_TARGET: f64 = 2.0;

struct Verdict {
    pass: bool,
    detail: String,
    /// Cannot pass on this machine regardless of the implementation.
    hardware_limited: bool,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict {
        pass,
        detail,
        hardware_limited: false,
    }
}

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/golden")
}

fn serial(alg: HashAlg, count: u64) -> Vec<u8> {
    let batch = gen_messages(0, count, MSG_WIDTH).unwrap();
    hash_batch_serial(alg, &batch).iter().flat_map(|d| d.as_bytes().to_vec()).collect()
}

fn cores() -> u32 {
    std::thread::available_parallelism().map(|n| n.get() as u32).unwrap_or(1)
}

fn hash_vectors() -> Verdict {
    let started = Instant::now();
    let fixture = include_str!("../../core/tests/fixtures/digests.txt");
    let mut cases = 0;
    let mut wrong = Vec::new();
    let mut lengths: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for line in fixture.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#')) {
        let f: Vec<&str> = line.split_whitespace().collect();
        let alg = HashAlg::from_name(f[0]).unwrap();
        let msg = if f[1] == "-" { Vec::new() } else { hex::decode(f[1]).unwrap() };
        let want = hex::decode(f[2]).unwrap();
        cases += 1;
        lengths.entry(alg.name()).or_default().push(msg.len());
        if digest(alg, &msg).as_bytes() != &want[..] {
            wrong.push(format!("{alg}/{}", msg.len()));
        }
        if alg == HashAlg::Sha1 && digest_sha1_accel(&msg).as_bytes() != &want[..] {
            wrong.push(format!("sha1-accel/{}", msg.len()));
        }
    }
    let mut missing = Vec::new();
    for alg in HashAlg::ALL {
        for len in [55, 56, 63, 64, 65] {
            if !lengths.get(alg.name()).is_some_and(|l| l.contains(&len)) {
                missing.push(format!("{alg}/{len}"));
            }
        }
    }
    let took = started.elapsed();
    verdict(
        wrong.is_empty() && missing.is_empty() && took < HASH_BUDGET,
        format!(
            "{cases} vectors, {} wrong, boundary lengths missing: {missing:?}, {:.3}s",
            wrong.len(),
            took.as_secs_f64()
        ),
    )
}

fn copy_elimination_equivalence() -> Verdict {
    let started = Instant::now();
    let mut rng = StdRng::seed_from_u64(0x5eed);
    let mut cases: Vec<(String, HirModule, BTreeMap<String, hetoc_core::interp::Data>)> = Vec::new();
    for name in ["in_place.hir", "copy_through.hir"] {
        let m = parse(&std::fs::read_to_string(golden_dir().join(name)).unwrap()).unwrap();
        let inputs = hetoc::workload::random_inputs(&m, 1);
        cases.push((name.to_string(), m, inputs));
    }
    for k in 0..COPY_ELIM_RANDOM_PROGRAMS {
        let len = rng.random_range(1..9u64);
        let nargs = rng.random_range(1..4usize);
        let steps: Vec<programs::Step> = (0..rng.random_range(1..7))
            .map(|_| {
                (
                    rng.random_range(0..8u8),
                    rng.random_range(0..3usize),
                    rng.random_range(0..3usize),
                    rng.random_range(-4..5i64),
                    rng.random_range(-4..5i64),
                )
            })
            .collect();
        let seed: Vec<i64> = (0..rng.random_range(1..8)).map(|_| rng.random_range(-100..100)).collect();
        let x = rng.random_range(0..=50u32) as f64 / 50.0;
        let devs = vec![DeviceBinding::new("cpu:0", x), DeviceBinding::new("acc:0", 1.0 - x)];
        cases.push((format!("random #{k}"), programs::build(len, nargs, &steps, &devs), programs::inputs(len, nargs, &seed)));
    }
    let mut failures = Vec::new();
    let mut eliminated = 0;
    for (name, m, inputs) in &cases {
        let before = interpret(m, inputs).unwrap();
        let mut opt = m.clone();
        if let Err(e) = host_mem_opt(&mut opt) {
            failures.push(format!("{name}: {e}"));
            continue;
        }
        if !verify(&opt).is_empty() {
            failures.push(format!("{name}: does not verify"));
            continue;
        }
        let left = remaining_device_nodes(opt.main().unwrap(), &|_| true);
        match interpret(&opt, inputs) {
            Ok(after) if after.to_bytes() == before.to_bytes() && left == 0 => {}
            Ok(_) => failures.push(format!("{name}: output differs or {left} device nodes remain")),
            Err(e) => failures.push(format!("{name}: {e}")),
        }
        eliminated += remaining_device_nodes(m.main().unwrap(), &|_| true);
    }
    let took = started.elapsed();
    verdict(
        failures.is_empty() && took < COPY_ELIM_BUDGET,
        format!(
            "{} programs (2 fixtures), {eliminated} device nodes eliminated, {} failures {:?}, {:.2}s",
            cases.len(),
            failures.len(),
            failures.iter().take(3).collect::<Vec<_>>(),
            took.as_secs_f64()
        ),
    )
}

fn ratio_invariance() -> Verdict {
    let started = Instant::now();
    let grid = ratio_grid(0.02).unwrap();
    let mut threads = vec![1, 4, cores()];
    threads.sort_unstable();
    threads.dedup();
    let mut runs = 0;
    let mut mismatches = Vec::new();
    for alg in HashAlg::ALL {
        let oracle = serial(alg, INVARIANCE_MESSAGES);
        let inputs = hash_inputs(alg, INVARIANCE_MESSAGES);
        for &t in &threads {
            let devices = DeviceTable::new(
                DeviceSpec::host(t, sha1_accel_available()),
                vec![DeviceSpec::simulated("acc:0", t, 1 << 34)],
            )
            .unwrap();
            for &x in &grid {
                let m = hash_batch_module(alg, INVARIANCE_MESSAGES, split(&devices, Some("acc:0"), x));
                let lowered = compile(&m, &devices, false).unwrap();
                let r = execute_with(&lowered, &devices, &inputs, ExecOptions::default());
                runs += 1;
                match r.map(|r| digests(&r.outputs)) {
                    Ok(Some(d)) if d == oracle => {}
                    _ => mismatches.push(format!("{alg} x={x} threads={t}")),
                }
            }
        }
    }
    let took = started.elapsed();
    verdict(
        mismatches.is_empty() && took < INVARIANCE_BUDGET,
        format!(
            "{runs} runs of {INVARIANCE_MESSAGES} messages, threads {threads:?}, {} mismatches {:?}, {:.1}s",
            mismatches.len(),
            mismatches.iter().take(3).collect::<Vec<_>>(),
            took.as_secs_f64()
        ),
    )
}

fn partition_totality() -> Verdict {
    let started = Instant::now();
    let mut rng = StdRng::seed_from_u64(7);
    let accels: Vec<DeviceSpec> = (0..5).map(|k| DeviceSpec::simulated(&format!("acc:{k}"), 2, 1 << 20)).collect();
    let devices = DeviceTable::new(DeviceSpec::host(2, false), accels).unwrap();
    let ids: Vec<String> = devices.iter().map(|d| d.id.clone()).collect();
    let mut bad = Vec::new();
    for case in 0..TILING_PAIRS {
        let n: i64 = match case % 3 {
            0 => rng.random_range(0..20),
            1 => rng.random_range(0..10_000),
            _ => rng.random_range(0..10_000_000),
        };
        let k = rng.random_range(1..=ids.len());
        let ratios: Vec<f64> = if case % 4 == 0 {
            let step = rng.random_range(0..=50u32);
            if k == 1 {
                vec![1.0]
            } else {
                let mut r = vec![0.0; k];
                r[0] = step as f64 / 50.0;
                r[k - 1] = 1.0 - r[0];
                r
            }
        } else {
            let w: Vec<u32> = (0..k).map(|_| rng.random_range(0..100)).collect();
            let total = w.iter().sum::<u32>().max(1) as f64;
            let mut r: Vec<f64> = w.iter().map(|v| *v as f64 / total).collect();
            let head: f64 = r[..k - 1].iter().sum();
            r[k - 1] = 1.0 - head;
            r
        };
        let bindings: Vec<DeviceBinding> = ids.iter().zip(&ratios).map(|(id, r)| DeviceBinding::new(id.clone(), *r)).collect();

        let mut f = FunctionBuilder::new("main");
        let buf = f.arg("a", HirType::host_buffer(ScalarKind::I64, 1));
        f.hyper_for(0, n, bindings, true, &[], &[&buf], None, |b, _| {
            let z = b.const_int(0, ScalarKind::Index);
            let one = b.const_int(1, ScalarKind::I64);
            b.store(&one, &buf, &z);
        })
        .unwrap();
        f.ret(&[]);
        let mut m = HirModule::new(vec![f.finish()]);
        if !verify(&m).is_empty() {
            bad.push(format!("case {case}: input does not verify"));
            continue;
        }
        if let Err(e) = lower_hyper_for(&mut m, &devices) {
            bad.push(format!("case {case}: {e}"));
            continue;
        }
        let mut got: Vec<(i64, i64)> = Vec::new();
        for op in &m.main().unwrap().body.ops {
            let Some((lb, ub)) = op.bounds() else { continue };
            match op.opcode {
                Opcode::ParLoop => got.push((lb, ub)),
                Opcode::DevLaunch => {
                    let base = op.attr_int(attr::BASE).unwrap_or(0);
                    got.push((base + lb, base + ub));
                }
                _ => {}
            }
        }
        let expect: Vec<(i64, i64)> = partition_ranges(0, n, &ratios).into_iter().filter(|(s, e)| s < e).collect();
        let mut at = 0;
        let mut tiles = true;
        for &(s, e) in &got {
            tiles &= s == at && s < e;
            at = e;
        }
        tiles &= at == n && got == expect;
        if !tiles {
            bad.push(format!("case {case}: n={n} ratios={ratios:?} got {got:?}"));
        }
    }
    let took = started.elapsed();
    verdict(
        bad.is_empty() && took < TILING_BUDGET,
        format!(
            "{TILING_PAIRS} lowered loops, {} not tiling {:?}, {:.2}s",
            bad.len(),
            bad.iter().take(2).collect::<Vec<_>>(),
            took.as_secs_f64()
        ),
    )
}

fn model_properties() -> Verdict {
    let started = Instant::now();
    // Exact pointwise identity and grid argmin on random models.
    let mut rng = StdRng::seed_from_u64(11);
    let grid = ratio_grid(0.02).unwrap();
    let mut identity_violations = 0;
    let mut argmin_violations = 0;
    for _ in 0..2000 {
        let m = PerfModel {
            p_cpu: rng.random_range(1e-8..1e-5),
            n_core: rng.random_range(1..64),
            p_gpu_over_nthread: rng.random_range(0.0..1e-6),
            t_alloc: rng.random_range(0.0..1e-7),
            t_memcpy: rng.random_range(0.0..1e-7),
            o_gpu: rng.random_range(0.0..0.5),
        };
        let n = rng.random_range(1..10_000_000u64);
        for &x in &grid {
            if m.t_opt(n, x) != m.t_cpu(n, x).max(m.t_gpu(n, x)) {
                identity_violations += 1;
            }
        }
        let best = m.grid_argmin(n, 0.02).unwrap();
        if (best - m.predict_opt_ratio(n).unwrap()).abs() > 0.02 + 1e-12 {
            argmin_violations += 1;
        }
    }

    // Measured sweep against the fitted model.
    let threads = cores();
    let devices = DeviceTable::new(
        DeviceSpec::host(threads, sha1_accel_available()),
        vec![DeviceSpec::simulated("acc:0", threads, 1 << 36).with_costs(200.0, 0.1, 0.0)],
    )
    .unwrap();
    let sizes: Vec<u64> = (1..=5).map(|k| k * MODEL_MESSAGES / 5).collect();
    let fit = match calibrate(HashAlg::Sha1, &sizes, &devices, MODEL_REPEAT, false) {
        Ok(f) => f,
        Err(e) => return verdict(false, format!("calibration failed: {e}")),
    };
    let predicted = fit.model.predict_opt_ratio(MODEL_MESSAGES).unwrap();
    let mut cfg = SweepConfig::new(HashAlg::Sha1, MODEL_MESSAGES);
    cfg.repeat = MODEL_REPEAT;
    let records = sweep(&cfg, &devices).unwrap();
    let failed = records.iter().filter(|r| r.error.is_some()).count();
    let measured = argmin(&records).map_or(f64::NAN, |r| r.ratio_cpu);
    let took = started.elapsed();
    let close = (measured - predicted).abs() <= MODEL_TOLERANCE + 1e-9;
    verdict(
        identity_violations == 0 && argmin_violations == 0 && failed == 0 && close && took < MODEL_BUDGET,
        format!(
            "t_opt identity violations {identity_violations}, grid argmin off by >1 step {argmin_violations}/2000; \
             fitted p_cpu={:.3e}s slope={:.3e}s o_gpu={:.3e}s; predicted x*={predicted:.4}, measured argmin={measured:.2} \
             (tolerance {MODEL_TOLERANCE}), {:.0}s",
            fit.model.p_cpu,
            fit.model.device_slope(),
            fit.model.o_gpu,
            took.as_secs_f64()
        ),
    )
}

fn slope_jump() -> Verdict {
    let alg = HashAlg::Sha1;
    let per_elem = MSG_WIDTH as u64 + alg.digest_len() as u64;
    let capacity = per_elem * 1_000_000;
    let devices = DeviceTable::new(
        DeviceSpec::host(cores(), sha1_accel_available()),
        vec![DeviceSpec::simulated("acc:0", cores(), capacity).with_costs(SLOPE_OVERHEAD_US, 0.1, 0.0)],
    )
    .unwrap();
    let mut rows = Vec::new();
    let mut counts_ok = true;
    for n in [500_000u64, 1_000_000, 1_100_000, 2_000_000] {
        let m = hash_batch_module(alg, n, split(&devices, Some("acc:0"), 0.0));
        let lowered = compile(&m, &devices, false).unwrap();
        let inputs = hash_inputs(alg, n);
        let mut best: Option<ExecReport> = None;
        for _ in 0..SLOPE_REPEAT {
            let r = match execute_batched(&lowered, &devices, &inputs) {
                Ok(r) => r,
                Err(e) => return verdict(false, format!("n={n}: {e}")),
            };
            let t = r.device("acc:0").unwrap().wall_s;
            if best.as_ref().is_none_or(|b| t < b.device("acc:0").unwrap().wall_s) {
                best = Some(r);
            }
        }
        let acc = best.unwrap().device("acc:0").unwrap().clone();
        let expect = (n * per_elem).div_ceil(capacity);
        counts_ok &= acc.batches == expect;
        rows.push((n, acc.batches, acc.wall_s));
    }
    let per = |i: usize| rows[i].2 / rows[i].0 as f64;
    let marginal = |i: usize, j: usize| (rows[j].2 - rows[i].2) / (rows[j].0 - rows[i].0) as f64;
    // 1.0M fills the arena exactly; 1.1M is the first size needing a
    // second batch.
    let jump = per(2) > per(1);
    let across = marginal(1, 2) > marginal(0, 1);
    let table: Vec<String> = rows
        .iter()
        .map(|(n, b, t)| format!("n={n} batches={b} t={t:.3}s per-element={:.1}ns", t / *n as f64 * 1e9))
        .collect();
    verdict(
        counts_ok && jump && across,
        format!(
            "{}; marginal within one batch {:.1}ns, across the boundary {:.1}ns",
            table.join("; "),
            marginal(0, 1) * 1e9,
            marginal(1, 2) * 1e9
        ),
    )
}

fn fuzz_case(rng: &mut StdRng, seeds: &[String]) -> String {
    const TOKENS: &[&str] = &[
        "func", "@main", "(", ")", "{", "}", "%a", "%i", ":", "buf<i64, 4>", "i64", "index", "hyper.for", "=", "to",
        "devices", "[", "]", "{target=\"cpu:0\", ratio=1.0}", "shared=true", "ins(", "outs(", "yield", "return", "load",
        "store", ",", "\n", " ", "0", "10", "hyper.reduce", "hyper.alloc", "dev(\"acc:0\")", "atomic_rmw", "add", "\"",
    ];
    match rng.random_range(0..3) {
        0 => {
            let len = rng.random_range(0..200);
            (0..len).map(|_| rng.random_range(0x09u8..0x7f) as char).collect()
        }
        1 => (0..rng.random_range(0..80)).map(|_| TOKENS[rng.random_range(0..TOKENS.len())]).collect(),
        _ => {
            let mut bytes = seeds[rng.random_range(0..seeds.len())].as_bytes().to_vec();
            for _ in 0..rng.random_range(1..8) {
                if bytes.is_empty() {
                    break;
                }
                let p = rng.random_range(0..bytes.len());
                match rng.random_range(0..4) {
                    0 => bytes[p] = rng.random_range(0x20u8..0x7f),
                    1 => {
                        bytes.remove(p);
                    }
                    2 => bytes.insert(p, rng.random_range(0x20u8..0x7f)),
                    _ => bytes.truncate(p),
                }
            }
            String::from_utf8_lossy(&bytes).into_owned()
        }
    }
}

fn round_trip() -> Verdict {
    let mut seeds = Vec::new();
    let mut problems = Vec::new();
    let mut files = 0;
    let mut entries: Vec<PathBuf> = std::fs::read_dir(golden_dir()).unwrap().map(|e| e.unwrap().path()).collect();
    entries.sort();
    for path in entries {
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or_default();
        if ext != "hir" && ext != "lowered" {
            continue;
        }
        files += 1;
        let text = std::fs::read_to_string(&path).unwrap();
        let m = match parse(&text) {
            Ok(m) => m,
            Err(e) => {
                problems.push(format!("{}: {:?}", path.display(), e.first().map(ToString::to_string)));
                continue;
            }
        };
        let printed = print(&m);
        if ext == "hir" && std::fs::read_to_string(path.with_extension("golden")).ok().as_deref() != Some(printed.as_str()) {
            problems.push(format!("{}: differs from golden", path.display()));
        }
        if parse(&printed).map(|m2| print(&m2)).ok().as_deref() != Some(printed.as_str()) {
            problems.push(format!("{}: print is not idempotent", path.display()));
        }
        seeds.push(text);
    }

    let mut rng = StdRng::seed_from_u64(0xf022);
    let started = Instant::now();
    let mut cases = 0u64;
    let mut crashes = 0u64;
    let mut accepted = 0u64;
    let hook = panic::take_hook();
    panic::set_hook(Box::new(|_| {}));
    while started.elapsed() < FUZZ_TIME {
        for _ in 0..256 {
            let text = fuzz_case(&mut rng, &seeds);
            cases += 1;
            let outcome = panic::catch_unwind(|| {
                let _ = parse_unverified(&text);
                parse(&text).ok().map(|m| {
                    let once = print(&m);
                    let twice = parse(&once).map(|m2| print(&m2));
                    twice.as_deref() == Ok(once.as_str())
                })
            });
            match outcome {
                Err(_) => crashes += 1,
                Ok(Some(true)) => accepted += 1,
                Ok(Some(false)) => problems.push(format!("accepted input does not round-trip: {text:?}")),
                Ok(None) => {}
            }
        }
    }
    panic::set_hook(hook);
    verdict(
        files >= 20 && problems.is_empty() && crashes == 0,
        format!(
            "{files} golden files, {} problems {:?}; fuzzed {cases} inputs for {}s, {accepted} accepted, {crashes} crashes",
            problems.len(),
            problems.iter().take(2).collect::<Vec<_>>(),
            FUZZ_TIME.as_secs()
        ),
    )
}

fn host_speedup() -> Verdict {
    let alg = HashAlg::Sha1;
    let inputs = hash_inputs(alg, SPEEDUP_MESSAGES);
    let mut times = Vec::new();
    for threads in [1, 4] {
        let devices = DeviceTable::host_only(DeviceSpec::host(threads, sha1_accel_available()));
        let m = hash_batch_module(alg, SPEEDUP_MESSAGES, split(&devices, None, 1.0));
        let lowered = compile(&m, &devices, false).unwrap();
        let best = (0..3)
            .map(|_| execute_with(&lowered, &devices, &inputs, ExecOptions::default()).unwrap().wall_s)
            .fold(f64::INFINITY, f64::min);
        times.push(best);
    }
    let speedup = times[0] / times[1];
    let n = cores();
    Verdict {
        pass: speedup >= SPEEDUP_TARGET,
        detail: format!(
            "1 thread {:.3}s, 4 threads {:.3}s, speedup {speedup:.2}x (target {SPEEDUP_TARGET}x) on {n} logical core(s)",
            times[0], times[1]
        ),
        hardware_limited: n < 4,
    }
}

fn main() {
    type Check = fn() -> Verdict;
    let criteria: Vec<(&str, Check)> = vec![
        ("hash correctness", hash_vectors),
        ("copy elimination equivalence", copy_elimination_equivalence),
        ("ratio invariance", ratio_invariance),
        ("partition totality", partition_totality),
        ("performance model", model_properties),
        ("batching slope jump", slope_jump),
        ("round trip and parser fuzzing", round_trip),
        ("host-parallel sha1 speedup", host_speedup),
    ];
    let mut blocking = 0;
    for (name, check) in criteria {
        let v = check();
        let tag = if v.pass { "PASS" } else { "FAIL" };
        let note = if !v.pass && v.hardware_limited {
            " [hardware-limited]"
        } else {
            ""
        };
        println!("{tag} {name}: {}{note}", v.detail);
        if !v.pass && !v.hardware_limited {
            blocking += 1;
        }
    }
    if blocking > 0 {
        std::process::exit(1);
    }
}
