use std::collections::BTreeMap;
use std::path::PathBuf;

use proptest::prelude::*;

#[path = "../../core/tests/common/mod.rs"]
mod programs;

use hetoc::runtime::{execute, execute_batched, execute_with, ExecError, ExecOptions, Overlap};
use hetoc::workload::{compile, digests, hash_batch_module, hash_inputs, random_inputs, split, MSG_WIDTH};
use hetoc_core::crypto::{gen_messages, hash_batch_serial, HashAlg};
use hetoc_core::hir::{HirModule, ScalarKind};
use hetoc_core::interp::{interpret, Buffer, Data};
use hetoc_core::text::parse;
use hetoc_core::{DeviceBinding, DeviceSpec, DeviceTable};

fn table(host_threads: u32, accel_threads: u32, capacity: u64) -> DeviceTable {
    DeviceTable::new(
        DeviceSpec::host(host_threads, false),
        vec![DeviceSpec::simulated("acc:0", accel_threads, capacity)],
    )
    .unwrap()
}

fn golden(name: &str) -> HirModule {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/golden").join(name);
    parse(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn serial(alg: HashAlg, count: u64) -> Vec<u8> {
    let batch = gen_messages(0, count, MSG_WIDTH).unwrap();
    hash_batch_serial(alg, &batch).iter().flat_map(|d| d.as_bytes().to_vec()).collect()
}

fn one_buffer(name: &str, elem: ScalarKind, data: Vec<i64>) -> BTreeMap<String, Data> {
    BTreeMap::from([(name.to_string(), Data::Buffer(Buffer { elem, data }))])
}

#[test]
fn sum_of_one_to_ten() {
    let devices = table(2, 4, 1 << 20);
    let m = compile(&golden("sum.hir"), &devices, false).unwrap();
    let r = execute(&m, &devices, &one_buffer("a", ScalarKind::I64, (1..=10).collect())).unwrap();
    assert_eq!(r.outputs.returns, vec![Data::Scalar(ScalarKind::I64, 55)]);
    for d in &r.devices {
        assert_eq!(d.batches, 1, "{}", d.id);
        assert_eq!(d.reclaimed_bytes, 0, "{}", d.id);
    }
}

#[test]
fn store_past_the_end_names_the_op() {
    let src = "func @main(%a: buf<i64, 4>) {\n  %n = const 4 : index\n  %v = const 1 : i64\n  store %v, %a[%n]\n  return\n}\n";
    let m = parse(src).unwrap();
    let err = execute(&m, &table(1, 1, 64), &one_buffer("a", ScalarKind::I64, vec![0; 4])).unwrap_err();
    assert!(matches!(err, ExecError::OutOfBounds { index: 4, len: 4, .. }), "{err:?}");
    assert!(err.to_string().starts_with("4:3: store"), "{err}");
}

#[test]
fn unlowered_modules_are_rejected() {
    let err = execute(&golden("sum.hir"), &table(1, 1, 64), &one_buffer("a", ScalarKind::I64, vec![0; 10])).unwrap_err();
    assert!(matches!(err, ExecError::NotLowered(_)), "{err:?}");
}

#[test]
fn sha1_half_and_half_matches_serial_hashing() {
    let devices = table(2, 8, 1 << 30);
    let m = hash_batch_module(HashAlg::Sha1, 1000, split(&devices, Some("acc:0"), 0.5));
    let m = compile(&m, &devices, false).unwrap();
    let r = execute(&m, &devices, &hash_inputs(HashAlg::Sha1, 1000)).unwrap();
    assert_eq!(digests(&r.outputs).unwrap(), serial(HashAlg::Sha1, 1000));
    let acc = r.device("acc:0").unwrap();
    assert_eq!(acc.bytes_to_device, 500 * 9 + 500 * 20);
    assert_eq!(acc.bytes_from_device, 500 * 20);
    assert_eq!(acc.peak_bytes, 500 * 29);
}

/// Adds one to every byte of `%a` on the accelerator; one byte of arena
/// per element.
const INCREMENT: &str = r#"
func @main(%a: buf<i8, 100>) {
  hyper.for %i = 0 to 100 devices [{target="acc:0", ratio=1.0}] shared=false ins() outs(%a) {
    %x = load %a[%i] : i8
    %one = const 1 : i8
    %y = addi %x, %one : i8
    store %y, %a[%i]
    yield
  }
  return
}
"#;

fn increment(capacity: u64, batched: bool) -> Result<hetoc::runtime::ExecReport, ExecError> {
    let devices = table(1, 4, capacity);
    let m = compile(&parse(INCREMENT).unwrap(), &devices, false).unwrap();
    let inputs = one_buffer("a", ScalarKind::I8, (0..100).collect());
    if batched {
        execute_batched(&m, &devices, &inputs)
    } else {
        execute(&m, &devices, &inputs)
    }
}

#[test]
fn batch_count_is_the_ceiling_of_needed_over_capacity() {
    let expect: Vec<i64> = (1..=100).collect();
    for (capacity, batches) in [(64, 2), (100, 1), (1000, 1), (50, 2), (49, 3), (1, 100)] {
        let r = increment(capacity, true).unwrap();
        assert_eq!(r.device("acc:0").unwrap().batches, batches, "capacity {capacity}");
        let Data::Buffer(b) = &r.outputs.args[0].1 else { panic!() };
        assert_eq!(b.data, expect);
        assert!(r.device("acc:0").unwrap().peak_bytes <= capacity);
    }
}

#[test]
fn over_capacity_without_batching_is_an_error() {
    let err = increment(64, false).unwrap_err();
    assert!(matches!(err, ExecError::ArenaFull { requested: 100, available: 64, .. }), "{err:?}");
    assert!(increment(100, false).is_ok());
}

#[test]
fn element_larger_than_the_arena_is_unsatisfiable() {
    let devices = table(1, 1, 10);
    let m = hash_batch_module(HashAlg::Sha1, 4, split(&devices, Some("acc:0"), 0.0));
    let m = compile(&m, &devices, false).unwrap();
    let err = execute_batched(&m, &devices, &hash_inputs(HashAlg::Sha1, 4)).unwrap_err();
    assert!(matches!(err, ExecError::Unsatisfiable { bytes: 29, available: 10, .. }), "{err:?}");
}

#[test]
fn batched_sha1_equals_unbatched() {
    let n = 10_000;
    let big = table(1, 4, 1 << 30);
    let small = table(1, 4, 29 * 2600);
    let m = hash_batch_module(HashAlg::Sha1, n, split(&big, Some("acc:0"), 0.0));
    let inputs = hash_inputs(HashAlg::Sha1, n);
    let a = execute(&compile(&m, &big, false).unwrap(), &big, &inputs).unwrap();
    let b = execute_batched(&compile(&m, &small, false).unwrap(), &small, &inputs).unwrap();
    assert_eq!(b.device("acc:0").unwrap().batches, 4);
    assert_eq!(a.outputs, b.outputs);
    assert_eq!(digests(&a.outputs).unwrap(), serial(HashAlg::Sha1, n));
}

#[test]
fn lowered_golden_programs_agree_with_the_interpreter() {
    let devices = DeviceTable::new(
        DeviceSpec::host(4, false),
        vec![
            DeviceSpec::simulated("acc:0", 64, 1 << 30),
            DeviceSpec::simulated("acc:1", 16, 1 << 20),
        ],
    )
    .unwrap();
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/golden");
    let mut checked = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("hir") {
            continue;
        }
        let src = parse(&std::fs::read_to_string(&path).unwrap()).unwrap();
        let lowered = compile(&src, &devices, false).unwrap();
        for seed in 0..3 {
            let inputs = random_inputs(&src, seed);
            let oracle = interpret(&src, &inputs).unwrap();
            for overlap in [Overlap::Concurrent, Overlap::Isolated] {
                let opts = ExecOptions { batching: false, overlap };
                let r = execute_with(&lowered, &devices, &inputs, opts).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
                assert_eq!(r.outputs, oracle, "{}", path.display());
                assert!(r.devices.iter().all(|d| d.reclaimed_bytes == 0), "{}: leaked", path.display());
            }
        }
        checked += 1;
    }
    assert!(checked >= 10);
}

#[test]
fn leaked_buffers_are_reclaimed() {
    let src = "func @main() {\n  %b = hyper.alloc dev(\"acc:0\") : buf<i64, 8>\n  return\n}\n";
    let r = execute(&parse(src).unwrap(), &table(1, 1, 1024), &BTreeMap::new()).unwrap();
    assert_eq!(r.device("acc:0").unwrap().reclaimed_bytes, 64);
    assert_eq!(r.device("acc:0").unwrap().peak_bytes, 64);
}

#[test]
fn simulated_costs_are_charged() {
    let devices = DeviceTable::new(
        DeviceSpec::host(1, false),
        vec![DeviceSpec::simulated("acc:0", 1, 1 << 20).with_costs(1000.0, 1.0, 500.0)],
    )
    .unwrap();
    let m = hash_batch_module(HashAlg::Md5, 100, split(&devices, Some("acc:0"), 0.0));
    let r = execute(&compile(&m, &devices, false).unwrap(), &devices, &hash_inputs(HashAlg::Md5, 100)).unwrap();
    let acc = r.device("acc:0").unwrap();
    // one launch, two staged buffers, 900 + 1600 bytes in and 1600 out
    let expect = 1e-3 + 2.0 * 500e-6 + 4100.0 * 1e-9;
    assert!((acc.simulated_s - expect).abs() < 1e-12, "{}", acc.simulated_s);
    assert!(r.wall_s >= expect);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn hash_output_is_independent_of_split_threads_and_capacity(
        alg in prop::sample::select(vec![HashAlg::Sha1, HashAlg::Md5, HashAlg::Sm3]),
        count in 0u64..400,
        x in 0.0f64..=1.0,
        host_threads in 1u32..5,
        accel_threads in 1u32..9,
        per_batch in 1u64..500,
        isolated in any::<bool>(),
    ) {
        let per_elem = (MSG_WIDTH as u64) + alg.digest_len() as u64;
        let devices = table(host_threads, accel_threads, per_batch * per_elem);
        let m = hash_batch_module(alg, count, split(&devices, Some("acc:0"), x));
        let lowered = compile(&m, &devices, false).unwrap();
        let opts = ExecOptions {
            batching: true,
            overlap: if isolated { Overlap::Isolated } else { Overlap::Concurrent },
        };
        let r = execute_with(&lowered, &devices, &hash_inputs(alg, count), opts).unwrap();
        prop_assert_eq!(digests(&r.outputs).unwrap(), serial(alg, count));
        let acc = r.device("acc:0").unwrap();
        let on_acc = count - ((count as f64 * x + 0.5) as u64).min(count);
        prop_assert_eq!(acc.batches, on_acc.div_ceil(per_batch));
        prop_assert_eq!(acc.reclaimed_bytes, 0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn lowered_programs_run_like_the_interpreter(
        len in 1u64..12,
        nargs in 1usize..4,
        steps in prop::collection::vec((0u8..8, 0usize..3, 0usize..3, -4i64..5, -4i64..5), 1..7),
        seed in prop::collection::vec(-100i64..100, 1..8),
        x in 0.0f64..=1.0,
        threads in 1u32..5,
        isolated in any::<bool>(),
    ) {
        let devices = table(threads, threads + 1, 1 << 20);
        let devs = vec![DeviceBinding::new("cpu:0", x), DeviceBinding::new("acc:0", 1.0 - x)];
        let src = programs::build(len, nargs, &steps, &devs);
        let inputs = programs::inputs(len, nargs, &seed);
        let oracle = interpret(&src, &inputs).unwrap();
        let lowered = compile(&src, &devices, false).unwrap();
        let opts = ExecOptions {
            batching: false,
            overlap: if isolated { Overlap::Isolated } else { Overlap::Concurrent },
        };
        let r = execute_with(&lowered, &devices, &inputs, opts).unwrap();
        prop_assert_eq!(&r.outputs, &oracle);
        for d in &r.devices {
            prop_assert_eq!(d.reclaimed_bytes, 0);
        }
    }
}
