//! Random alloc/memcpy/kernel programs shared by the property and
//! acceptance suites.

use std::collections::BTreeMap;

use hetoc_core::hir::RmwKind;
use hetoc_core::interp::{Buffer, Data};
use hetoc_core::{DeviceBinding, FunctionBuilder, HirModule, HirType, ScalarKind, Value};

const I64: ScalarKind = ScalarKind::I64;

/// One step of a generated program: `(pattern, a, c, mul, add)`.
pub type Step = (u8, usize, usize, i64, i64);

pub fn kernel(b: &mut FunctionBuilder, len: u64, devs: &[DeviceBinding], x: &Value, y: &Value, mul: i64, add: i64) {
    b.hyper_for(0, len as i64, devs.to_vec(), true, &[x], &[y], None, |b, i| {
        let v = b.load(x, i);
        let m = b.const_int(mul, I64);
        let p = b.muli(&v, &m);
        let a = b.const_int(add, I64);
        let s = b.addi(&p, &a);
        b.store(&s, y, i);
    })
    .unwrap();
}

/// Builds a program out of alloc/memcpy/kernel patterns whose meaning does
/// not depend on whether device buffers alias host buffers.
pub fn build(len: u64, nargs: usize, steps: &[Step], devs: &[DeviceBinding]) -> HirModule {
    let mut b = FunctionBuilder::new("main");
    let ty = HirType::host_buffer(I64, len);
    let args: Vec<Value> = (0..nargs).map(|k| b.arg(format!("h{k}"), ty.clone())).collect();
    let mut results = Vec::new();
    for (n, &(pattern, a, c, mul, add)) in steps.iter().enumerate() {
        let (ha, hc) = (&args[a % nargs], &args[c % nargs]);
        let dev = if n % 2 == 0 { "cpu:0" } else { "acc:0" };
        match pattern % 8 {
            0 => {
                let u0 = b.hyper_alloc(dev, I64, len);
                let u1 = b.hyper_alloc(dev, I64, len);
                b.hyper_memcpy(ha, &u0);
                kernel(&mut b, len, devs, &u0, &u1, mul, add);
                b.hyper_memcpy(&u1, hc);
                b.hyper_dealloc(&u0);
                b.hyper_dealloc(&u1);
            }
            1 => {
                let h0 = b.memref_alloc(I64, len);
                kernel(&mut b, len, devs, ha, &h0, mul, add);
                let u = b.hyper_alloc(dev, I64, len);
                b.hyper_memcpy(&h0, &u);
                b.hyper_memcpy(&u, hc);
                b.hyper_dealloc(&u);
                b.memref_dealloc(&h0);
            }
            2 => {
                let h0 = b.memref_alloc(I64, len);
                kernel(&mut b, len, devs, ha, &h0, 1, add);
                let u = b.hyper_alloc(dev, I64, len);
                b.hyper_memcpy(&h0, &u);
                kernel(&mut b, len, devs, &u, &u, mul, 1);
                b.hyper_memcpy(&u, ha);
                b.hyper_memcpy(&u, hc);
                b.hyper_dealloc(&u);
                b.memref_dealloc(&h0);
            }
            3 => {
                let u = b.hyper_alloc(dev, I64, len);
                kernel(&mut b, len, devs, ha, &u, mul, add);
                kernel(&mut b, len, devs, &u, hc, 2, 0);
                b.hyper_dealloc(&u);
            }
            4 => kernel(&mut b, len, devs, ha, hc, mul, add),
            5 => {
                let s = b
                    .hyper_for(0, len as i64, devs.to_vec(), true, &[ha], &[], Some(I64), |b, i| {
                        let v = b.load(ha, i);
                        b.hyper_reduce(&v, if mul < 0 { RmwKind::Min } else { RmwKind::Add });
                    })
                    .unwrap()
                    .unwrap();
                results.push(s);
            }
            6 => {
                // The host buffer is allocated after the device buffer.
                let u = b.hyper_alloc(dev, I64, len);
                kernel(&mut b, len, devs, ha, &u, mul, add);
                let h0 = b.memref_alloc(I64, len);
                b.hyper_memcpy(&u, &h0);
                kernel(&mut b, len, devs, &h0, hc, 1, 1);
                b.hyper_dealloc(&u);
                b.memref_dealloc(&h0);
            }
            _ => {
                // The host buffer is freed before the device buffer's last use.
                let h0 = b.memref_alloc(I64, len);
                kernel(&mut b, len, devs, ha, &h0, mul, 0);
                let u = b.hyper_alloc(dev, I64, len);
                b.hyper_memcpy(&h0, &u);
                b.memref_dealloc(&h0);
                kernel(&mut b, len, devs, &u, &u, 1, add);
                b.hyper_memcpy(&u, hc);
                b.hyper_dealloc(&u);
            }
        }
    }
    let refs: Vec<&Value> = results.iter().collect();
    b.ret(&refs);
    HirModule::new(vec![b.finish()])
}

pub fn inputs(len: u64, nargs: usize, seed: &[i64]) -> BTreeMap<String, Data> {
    (0..nargs)
        .map(|k| {
            let vals: Vec<i64> = (0..len as usize).map(|i| seed[(i + 7 * k) % seed.len()] + i as i64).collect();
            (format!("h{k}"), Data::Buffer(Buffer::from_i64s(I64, &vals)))
        })
        .collect()
}

