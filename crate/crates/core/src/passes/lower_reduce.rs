//! Turns the `hyper.reduce` of each lowered loop into an atomic update of
//! a one-element accumulator.
//!
//! Host loops accumulate into a host buffer. Device loops accumulate into
//! a device buffer that is initialised from, and copied back to, a host
//! buffer around the loop group. The loop result is then a load of the
//! host buffer.

use alloc::string::ToString;
use alloc::vec::Vec;

use super::lower_for::{body_reduce, const_op, recognize_reduce};
use super::{loop_groups, Pass, PassContext, PassError};
use crate::hir::{attr, Attr, Block, HirModule, HirOp, HirType, IdGen, MemSpace, Opcode};

pub struct LowerReduce;

impl Pass for LowerReduce {
    fn name(&self) -> &'static str {
        "lower-reduce"
    }

    fn run(&self, module: &mut HirModule, _ctx: &PassContext<'_>) -> Result<(), PassError> {
        lower_reduce(module)
    }
}

pub fn lower_reduce(module: &mut HirModule) -> Result<(), PassError> {
    let mut remaining = false;
    for f in &module.functions {
        f.body.walk(&mut |op| remaining |= op.opcode == Opcode::HyperFor);
    }
    if remaining {
        return Err(PassError::Precondition(
            "lower-reduce requires every hyper.for to be lowered first".to_string(),
        ));
    }
    for f in &mut module.functions {
        let mut ids = f.id_gen();
        block(&mut f.body, &mut ids)?;
    }
    Ok(())
}

fn block(b: &mut Block, ids: &mut IdGen) -> Result<(), PassError> {
    for op in &mut b.ops {
        for region in &mut op.regions {
            block(region, ids)?;
        }
    }
    let groups = loop_groups(b);
    let mut ops = core::mem::take(&mut b.ops);
    let mut out = Vec::with_capacity(ops.len());
    let mut cursor = 0;
    let mut drained = ops.drain(..);
    for (start, end) in groups {
        while cursor < start {
            out.push(drained.next().expect("op"));
            cursor += 1;
        }
        let mut pre = Vec::new();
        let mut post = Vec::new();
        let mut loops = Vec::new();
        while cursor < end {
            let mut op = drained.next().expect("loop");
            cursor += 1;
            if !op.results.is_empty() {
                lower_loop(&mut op, ids, &mut pre, &mut post)?;
            }
            loops.push(op);
        }
        out.extend(pre);
        out.extend(loops);
        out.extend(post);
    }
    out.extend(drained);
    b.ops = out;
    Ok(())
}

fn lower_loop(op: &mut HirOp, ids: &mut IdGen, pre: &mut Vec<HirOp>, post: &mut Vec<HirOp>) -> Result<(), PassError> {
    let result = op.results.remove(0);
    let body = op
        .body_mut()
        .ok_or_else(|| PassError::Precondition("loop without a body".to_string()))?;
    let pos = body
        .ops
        .iter()
        .position(|o| o.opcode == Opcode::HyperReduce)
        .ok_or_else(|| PassError::Reduce("loop result without hyper.reduce".to_string()))?;
    let (kind, elem) = recognize_reduce(body_reduce(body).expect("reduce"))?;
    let value = body.ops[pos].operands[0];

    let zero = ids.fresh(HirType::index());
    let init = ids.fresh(result.ty.clone());
    let host = ids.fresh(HirType::host_buffer(elem, 1));
    pre.push(HirOp::new(Opcode::MemrefAlloc).with_result(host.clone()));
    pre.push(const_op(0, zero.clone()));
    pre.push(const_op(kind.identity(elem), init.clone()));
    pre.push(HirOp::new(Opcode::Store).with_operands([init.id, host.id, zero.id]));

    let target = if op.opcode == Opcode::DevLaunch {
        let device = op.attr_str(attr::DEVICE).unwrap_or_default().to_string();
        let space = MemSpace::new(device.clone()).map_err(|e| PassError::Precondition(e.to_string()))?;
        let dev = ids.fresh(HirType::Buffer { elem, len: 1, space });
        pre.push(
            HirOp::new(Opcode::HyperAlloc)
                .with_attr(attr::DEVICE, Attr::Str(device))
                .with_result(dev.clone()),
        );
        pre.push(HirOp::new(Opcode::HyperMemcpy).with_operands([host.id, dev.id]));
        post.push(HirOp::new(Opcode::HyperMemcpy).with_operands([dev.id, host.id]));
        post.push(HirOp::new(Opcode::Load).with_operands([host.id, zero.id]).with_result(result));
        post.push(HirOp::new(Opcode::HyperDealloc).with_operands([dev.id]));
        dev.id
    } else {
        post.push(HirOp::new(Opcode::Load).with_operands([host.id, zero.id]).with_result(result));
        host.id
    };
    post.push(HirOp::new(Opcode::MemrefDealloc).with_operands([host.id]));

    let body = op.body_mut().expect("body");
    let span = body.ops[pos].span;
    let mut rmw = HirOp::new(Opcode::AtomicRmw)
        .with_operands([value, target, zero.id])
        .with_attr(attr::KIND, Attr::Str(kind.name().to_string()));
    rmw.span = span;
    body.ops[pos] = rmw;
    Ok(())
}
