mod common;

use proptest::prelude::*;

use common::{build, inputs, Step};
use hetoc_core::interp::interpret;
use hetoc_core::model::{ratio_grid, PerfModel};
use hetoc_core::passes::dataflow::build_dataflow_graph;
use hetoc_core::passes::host_mem_opt::{remaining_device_nodes, simplify};
use hetoc_core::passes::{host_mem_opt, partition_ranges, PassContext, PassManager};
use hetoc_core::text::{parse, print};
use hetoc_core::verify::check_bindings;
use hetoc_core::{verify, DeviceBinding, DeviceSpec, DeviceTable};

fn host_only() -> Vec<DeviceBinding> {
    vec![DeviceBinding::new("cpu:0", 1.0)]
}

fn devices() -> DeviceTable {
    DeviceTable::new(DeviceSpec::host(4, false), vec![DeviceSpec::simulated("acc:0", 32, 1 << 30)]).unwrap()
}

fn program() -> impl Strategy<Value = (u64, usize, Vec<Step>, Vec<i64>)> {
    (
        1u64..9,
        1usize..4,
        prop::collection::vec((0u8..8, 0usize..3, 0usize..3, -4i64..5, -4i64..5), 1..7),
        prop::collection::vec(-100i64..100, 1..8),
    )
}

/// Ratio vector of `k` entries summing to 1 with the last entry absorbing
/// rounding.
fn ratios(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0u32..100, k).prop_map(|w| {
        let total: u32 = w.iter().sum::<u32>().max(1);
        let mut r: Vec<f64> = w.iter().map(|x| *x as f64 / total as f64).collect();
        if w.iter().all(|x| *x == 0) {
            r = vec![0.0; r.len()];
            *r.last_mut().unwrap() = 1.0;
        }
        let head: f64 = r[..r.len() - 1].iter().sum();
        *r.last_mut().unwrap() = 1.0 - head;
        r
    })
}

fn assert_tiles(lb: i64, ub: i64, ranges: &[(i64, i64)]) {
    let mut at = lb;
    for &(s, e) in ranges {
        assert_eq!(s, at);
        assert!(s <= e);
        at = e;
    }
    assert_eq!(at, ub);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn host_mem_opt_preserves_meaning((len, nargs, steps, seed) in program()) {
        let before = build(len, nargs, &steps, &host_only());
        prop_assert!(verify(&before).is_empty());
        let mut after = before.clone();
        host_mem_opt(&mut after).unwrap();
        after.renumber();
        prop_assert_eq!(verify(&after), vec![], "{}", print(&after));
        prop_assert_eq!(remaining_device_nodes(after.main().unwrap(), &|_| true), 0);
        let input = inputs(len, nargs, &seed);
        let want = interpret(&before, &input).unwrap();
        let got = interpret(&after, &input).unwrap();
        prop_assert_eq!(got.to_bytes(), want.to_bytes(), "{}", print(&after));
    }

    #[test]
    fn host_mem_opt_terminates_within_bound((len, nargs, steps, _seed) in program()) {
        let m = build(len, nargs, &steps, &host_only());
        let g = build_dataflow_graph(m.main().unwrap()).unwrap();
        let s = simplify(&g, &|_| true);
        prop_assert!(s.steps <= g.nodes_u.len() + g.edges.len());
        prop_assert_eq!(s.mapping.len(), g.nodes_u.len());
    }

    #[test]
    fn lowering_preserves_meaning((len, nargs, steps, seed) in program(), r in ratios(2)) {
        let devs = vec![DeviceBinding::new("cpu:0", r[0]), DeviceBinding::new("acc:0", r[1])];
        let src = build(len, nargs, &steps, &devs);
        let input = inputs(len, nargs, &seed);
        let want = interpret(&src, &input).unwrap();
        let mut lowered = src.clone();
        let table = devices();
        let ctx = PassContext { devices: &table, no_sha_accel: false };
        PassManager::default().run(&mut lowered, &ctx).unwrap();
        let got = interpret(&lowered, &input).unwrap();
        prop_assert_eq!(got.to_bytes(), want.to_bytes());
    }

    #[test]
    fn print_parse_round_trip((len, nargs, steps, _seed) in program(), r in ratios(2), lower in any::<bool>()) {
        let devs = vec![DeviceBinding::new("cpu:0", r[0]), DeviceBinding::new("acc:0", r[1])];
        let mut m = build(len, nargs, &steps, &devs);
        if lower {
            let table = devices();
            let ctx = PassContext { devices: &table, no_sha_accel: false };
            PassManager::default().run(&mut m, &ctx).unwrap();
        }
        m.renumber();
        let text = print(&m);
        let back = parse(&text).unwrap();
        prop_assert_eq!(&back, &m);
        prop_assert_eq!(print(&back), text);
    }

    #[test]
    fn partitions_tile_the_space(lb in -1000i64..1000, n in 0i64..100_000, r in (1usize..6).prop_flat_map(ratios)) {
        let ranges = partition_ranges(lb, lb + n, &r);
        prop_assert_eq!(ranges.len(), r.len());
        assert_tiles(lb, lb + n, &ranges);
    }

    #[test]
    fn grid_ratio_vectors_tile(n in 0i64..1_000_000) {
        for x in ratio_grid(0.02).unwrap() {
            assert_tiles(0, n, &partition_ranges(0, n, &[x, 1.0 - x]));
        }
    }

    #[test]
    fn balanced_ratio_lists_verify(r in (1usize..6).prop_flat_map(ratios)) {
        let b: Vec<DeviceBinding> = r.iter().enumerate().map(|(i, x)| DeviceBinding::new(format!("acc:{i}"), *x)).collect();
        prop_assert!(check_bindings(&b).is_ok());
    }

    #[test]
    fn unbalanced_ratio_lists_are_rejected(r in (1usize..6).prop_flat_map(ratios), excess in 0.001f64..0.5) {
        let mut b: Vec<DeviceBinding> = r.iter().enumerate().map(|(i, x)| DeviceBinding::new(format!("acc:{i}"), *x)).collect();
        b[0].duty_ratio += excess;
        prop_assert!(check_bindings(&b).is_err());
    }

    #[test]
    fn model_shape_on_the_grid(
        p_cpu in 1e-9f64..1e-5,
        n_core in 1u32..64,
        slope in 0f64..1e-5,
        o_gpu in 0f64..1.0,
        n in 1u64..10_000_000,
    ) {
        let m = PerfModel { p_cpu, n_core, p_gpu_over_nthread: slope, t_alloc: 0.0, t_memcpy: 0.0, o_gpu };
        let grid = ratio_grid(0.02).unwrap();
        prop_assert_eq!(grid.len(), 51);
        for w in grid.windows(2) {
            prop_assert!(m.t_cpu(n, w[0]) <= m.t_cpu(n, w[1]));
            prop_assert!(m.t_gpu(n, w[0]) >= m.t_gpu(n, w[1]));
        }
        for &x in &grid {
            prop_assert_eq!(m.t_opt(n, x), m.t_cpu(n, x).max(m.t_gpu(n, x)));
        }
        let x_star = m.predict_opt_ratio(n).unwrap();
        let best = m.grid_argmin(n, 0.02).unwrap();
        prop_assert!((best - x_star).abs() <= 0.02 + 1e-12, "argmin {} vs {}", best, x_star);
    }
}
