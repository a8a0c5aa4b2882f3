//! Expands `crypto.hash_batch` into a `hyper.for` over the messages whose
//! body digests one message with `crypto.digest`.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::{Pass, PassContext, PassError};
use crate::crypto::HashAlg;
use crate::device::DeviceTable;
use crate::hir::{attr, Attr, Block, DeviceBinding, HirModule, HirOp, HirType, IdGen, Opcode};

pub struct LowerCrypto;

impl Pass for LowerCrypto {
    fn name(&self) -> &'static str {
        "lower-crypto"
    }

    fn run(&self, module: &mut HirModule, ctx: &PassContext<'_>) -> Result<(), PassError> {
        lower_crypto(module, ctx.devices, ctx.no_sha_accel)
    }
}

/// Kernel variant chosen for `alg` when running on the host. Devices
/// without SHA extensions are switched back to `generic` when loops are
/// split per device.
pub fn digest_variant(alg: HashAlg, devices: &DeviceTable, no_sha_accel: bool) -> &'static str {
    if alg == HashAlg::Sha1 && devices.host.sha_accel && !no_sha_accel {
        "accel"
    } else {
        "generic"
    }
}

pub fn lower_crypto(module: &mut HirModule, devices: &DeviceTable, no_sha_accel: bool) -> Result<(), PassError> {
    for f in &mut module.functions {
        let mut ids = f.id_gen();
        let types = f.value_types();
        block(&mut f.body, &mut ids, &types, devices, no_sha_accel)?;
    }
    Ok(())
}

fn block(
    b: &mut Block,
    ids: &mut IdGen,
    types: &alloc::collections::BTreeMap<crate::hir::ValueId, HirType>,
    devices: &DeviceTable,
    no_sha_accel: bool,
) -> Result<(), PassError> {
    for op in &mut b.ops {
        for region in &mut op.regions {
            block(region, ids, types, devices, no_sha_accel)?;
        }
        if op.opcode != Opcode::CryptoHashBatch {
            continue;
        }
        let alg_name = op.attr_str(attr::ALG).unwrap_or_default().to_string();
        let alg = HashAlg::from_name(&alg_name).ok_or(PassError::UnknownAlg(alg_name))?;
        let msg_len = op
            .attr_int(attr::MSG_LEN)
            .filter(|n| *n > 0)
            .ok_or_else(|| PassError::Precondition("crypto.hash_batch requires a positive msg_len".to_string()))?;
        let (msgs, out) = (op.operands[0], op.operands[1]);
        let total = types.get(&msgs).and_then(HirType::buffer_len).unwrap_or(0) as i64;
        let count = total / msg_len;
        let bindings: Vec<DeviceBinding> = match op.attrs.get(attr::DEVICES) {
            Some(Attr::Bindings(b)) => b.clone(),
            Some(_) => return Err(PassError::Bindings("devices must be a device list".to_string())),
            None => alloc::vec![DeviceBinding::new(devices.host.id.clone(), 1.0)],
        };

        let iv = ids.fresh(HirType::index());
        let mut body = Block::new(alloc::vec![iv.clone()]);
        let mut digest = HirOp::new(Opcode::CryptoDigest)
            .with_operands([msgs, out, iv.id])
            .with_attr(attr::ALG, Attr::Str(String::from(alg.name())))
            .with_attr(attr::MSG_LEN, Attr::Int(msg_len))
            .with_attr(attr::VARIANT, Attr::Str(String::from(digest_variant(alg, devices, no_sha_accel))));
        digest.span = op.span;
        body.ops.push(digest);
        body.ops.push(HirOp::new(Opcode::Yield));

        let mut lowered = HirOp::new(Opcode::HyperFor)
            .with_operands([msgs, out])
            .with_attr(attr::LB, Attr::Int(0))
            .with_attr(attr::UB, Attr::Int(count))
            .with_attr(attr::DEVICES, Attr::Bindings(bindings))
            .with_attr(attr::SHARED, Attr::Bool(false))
            .with_attr(attr::NUM_INS, Attr::Int(1))
            .with_region(body);
        lowered.span = op.span;
        *op = lowered;
    }
    Ok(())
}
