//! The batch-hashing benchmark program and its inputs.

use std::collections::BTreeMap;

use rand::rngs::StdRng;
use rand::{RngExt, SeedableRng};

use hetoc_core::crypto::{gen_messages, HashAlg};
use hetoc_core::hir::{attr, Attr, DeviceBinding, FunctionBuilder, HirModule, HirOp, HirType, Opcode, ScalarKind};
use hetoc_core::interp::{Buffer, Data, Outcome};
use hetoc_core::passes::{PassContext, PassError, PassManager, DEFAULT_PIPELINE};
use hetoc_core::DeviceTable;

/// Benchmark messages are 9 ASCII digits.
pub const MSG_WIDTH: u32 = 9;

/// Splits a loop between the host (`x`) and one accelerator (`1 - x`).
/// Without an accelerator everything runs on the host.
pub fn split(devices: &DeviceTable, accel: Option<&str>, x: f64) -> Vec<DeviceBinding> {
    match accel {
        Some(id) => vec![
            DeviceBinding::new(devices.host.id.clone(), x),
            DeviceBinding::new(id, 1.0 - x),
        ],
        None => vec![DeviceBinding::new(devices.host.id.clone(), 1.0)],
    }
}

/// `main(%msgs, %digests)` hashing `count` messages of `MSG_WIDTH` bytes.
pub fn hash_batch_module(alg: HashAlg, count: u64, bindings: Vec<DeviceBinding>) -> HirModule {
    let mut f = FunctionBuilder::new("main");
    let msgs = f.arg("msgs", HirType::host_buffer(ScalarKind::I8, count * MSG_WIDTH as u64));
    let out = f.arg("digests", HirType::host_buffer(ScalarKind::I8, count * alg.digest_len() as u64));
    f.push(
        HirOp::new(Opcode::CryptoHashBatch)
            .with_operands([msgs.id, out.id])
            .with_attr(attr::ALG, Attr::Str(alg.name().to_string()))
            .with_attr(attr::MSG_LEN, Attr::Int(MSG_WIDTH as i64))
            .with_attr(attr::DEVICES, Attr::Bindings(bindings)),
    );
    f.ret(&[]);
    HirModule::new(vec![f.finish()])
}

/// Inputs for [`hash_batch_module`]: messages `0..count` and a zeroed
/// digest buffer.
pub fn hash_inputs(alg: HashAlg, count: u64) -> BTreeMap<String, Data> {
    let batch = gen_messages(0, count, MSG_WIDTH).expect("message count fits the width");
    let mut inputs = BTreeMap::new();
    inputs.insert(
        "msgs".to_string(),
        Data::Buffer(Buffer::from_bytes(ScalarKind::I8, batch.data()).expect("bytes")),
    );
    inputs.insert(
        "digests".to_string(),
        Data::Buffer(Buffer::zeroed(ScalarKind::I8, count as usize * alg.digest_len())),
    );
    inputs
}

/// The digest buffer of a finished run, as raw bytes.
pub fn digests(outcome: &Outcome) -> Option<Vec<u8>> {
    outcome.args.iter().find(|(n, _)| n == "digests").map(|(_, d)| d.to_bytes())
}

/// Runs the default pipeline.
pub fn compile(module: &HirModule, devices: &DeviceTable, no_sha_accel: bool) -> Result<HirModule, PassError> {
    let mut m = module.clone();
    let ctx = PassContext { devices, no_sha_accel };
    PassManager::from_spec(DEFAULT_PIPELINE)?.run(&mut m, &ctx)?;
    Ok(m)
}

/// Pseudo-random values for every parameter of `main`, reproducible from
/// `seed`. Integers stay small so sums do not wrap.
pub fn random_inputs(module: &HirModule, seed: u64) -> BTreeMap<String, Data> {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut inputs = BTreeMap::new();
    let Some(main) = module.main() else {
        return inputs;
    };
    for (a, name) in main.body.args.iter().zip(&main.arg_names) {
        let mut value = |k: ScalarKind| -> i64 {
            match k {
                ScalarKind::I8 => rng.random_range(0..128),
                ScalarKind::F64 => rng.random_range(0.0..1.0f64).to_bits() as i64,
                _ => rng.random_range(0..1000),
            }
        };
        let data = match &a.ty {
            HirType::Scalar(k) => Data::Scalar(*k, value(*k)),
            HirType::Buffer { elem, len, .. } => Data::Buffer(Buffer {
                elem: *elem,
                data: (0..*len).map(|_| value(*elem)).collect(),
            }),
        };
        inputs.insert(name.clone(), data);
    }
    inputs
}
