//! Splits each `hyper.for` into one loop per device.
//!
//! The iteration space is cut by cumulative duty ratio. Host-resident
//! devices get a `par.loop` over their sub-range; accelerators get a
//! `dev.launch` over `[0, len)` whose body rebuilds the global index from
//! `base`. Loops produced from one `hyper.for` share a `group` id and run
//! concurrently. A loop result becomes one partial result per device,
//! folded together after the group.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::{clone_fresh, Pass, PassContext, PassError};
use crate::device::DeviceTable;
use crate::hir::{attr, Attr, Block, HirModule, HirOp, HirType, IdGen, Opcode, RmwKind, ScalarKind, Value};

pub struct LowerHyperFor;

impl Pass for LowerHyperFor {
    fn name(&self) -> &'static str {
        "lower-hyper-for"
    }

    fn run(&self, module: &mut HirModule, ctx: &PassContext<'_>) -> Result<(), PassError> {
        lower_hyper_for(module, ctx.devices)
    }
}

/// Cuts `[lb, ub)` into one contiguous range per ratio. Endpoints are
/// `lb + round(n * cumulative ratio)` with halves rounded up; the last one
/// is always `ub`, so the ranges cover the space exactly.
pub fn partition_ranges(lb: i64, ub: i64, ratios: &[f64]) -> Vec<(i64, i64)> {
    let n = (ub - lb).max(0);
    let mut out = Vec::with_capacity(ratios.len());
    let mut cum = 0.0;
    let mut prev = lb;
    for (k, r) in ratios.iter().enumerate() {
        cum += r;
        let end = if k + 1 == ratios.len() {
            lb + n
        } else {
            let off = cum * n as f64 + 0.5;
            let off = if off.is_nan() || off < 0.0 { 0 } else { off as i64 };
            (lb + off.min(n)).max(prev)
        };
        out.push((prev, end));
        prev = end;
    }
    out
}

/// Reduction kind of a `hyper.reduce` whose region is exactly one
/// two-operand `atomic_rmw` over the region arguments.
pub fn recognize_reduce(op: &HirOp) -> Result<(RmwKind, ScalarKind), PassError> {
    let region = op
        .regions
        .first()
        .ok_or_else(|| PassError::Reduce("hyper.reduce without a region".to_string()))?;
    let unsupported = || PassError::Reduce("combine region must be a single atomic_rmw".to_string());
    let [rmw, ret] = region.ops.as_slice() else {
        return Err(unsupported());
    };
    if rmw.opcode != Opcode::AtomicRmw || ret.opcode != Opcode::HyperReduceReturn || region.args.len() != 2 {
        return Err(unsupported());
    }
    let (l, r) = (region.args[0].id, region.args[1].id);
    let y = rmw.results.first().map(|v| v.id);
    if !(rmw.operands == [l, r] || rmw.operands == [r, l]) || ret.operands.first().copied() != y {
        return Err(unsupported());
    }
    let kind = rmw
        .attr_str(attr::KIND)
        .and_then(RmwKind::from_name)
        .ok_or_else(unsupported)?;
    match region.args[0].ty.scalar() {
        Some(s) if s.is_integer() => Ok((kind, s)),
        _ => Err(PassError::Reduce(alloc::format!(
            "reduction over {} is not supported",
            region.args[0].ty
        ))),
    }
}

/// The `hyper.reduce` of a loop body, if any.
pub(crate) fn body_reduce(body: &Block) -> Option<&HirOp> {
    body.ops.iter().find(|o| o.opcode == Opcode::HyperReduce)
}

pub(crate) fn const_op(value: i64, v: Value) -> HirOp {
    HirOp::new(Opcode::Const)
        .with_attr(attr::VALUE, Attr::Int(value))
        .with_result(v)
}

pub fn lower_hyper_for(module: &mut HirModule, devices: &DeviceTable) -> Result<(), PassError> {
    for f in &mut module.functions {
        let mut ids = f.id_gen();
        let mut next_group = 0;
        let mut cx = Lowering {
            devices,
            ids: &mut ids,
            next_group: &mut next_group,
        };
        cx.block(&mut f.body)?;
    }
    Ok(())
}

struct Lowering<'a> {
    devices: &'a DeviceTable,
    ids: &'a mut IdGen,
    next_group: &'a mut i64,
}

impl Lowering<'_> {
    fn block(&mut self, block: &mut Block) -> Result<(), PassError> {
        let ops = core::mem::take(&mut block.ops);
        for mut op in ops {
            for region in &mut op.regions {
                self.block(region)?;
            }
            if op.opcode == Opcode::HyperFor {
                self.lower(op, &mut block.ops)?;
            } else {
                block.ops.push(op);
            }
        }
        Ok(())
    }

    fn lower(&mut self, op: HirOp, out: &mut Vec<HirOp>) -> Result<(), PassError> {
        let (lb, ub) = op
            .bounds()
            .ok_or_else(|| PassError::Precondition("hyper.for without bounds".to_string()))?;
        let bindings = op.bindings().unwrap_or_default();
        let specs = bindings
            .iter()
            .map(|b| {
                self.devices
                    .get(&b.target_id)
                    .ok_or_else(|| PassError::UnknownDevice(b.target_id.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let ratios: Vec<f64> = bindings.iter().map(|b| b.duty_ratio).collect();
        let ranges = partition_ranges(lb, ub, &ratios);
        let body = op
            .body()
            .ok_or_else(|| PassError::Precondition("hyper.for without a body".to_string()))?;
        let reduce = match op.result() {
            Some(_) => {
                let r = body_reduce(body)
                    .ok_or_else(|| PassError::Reduce("loop result without hyper.reduce".to_string()))?;
                Some(recognize_reduce(r)?)
            }
            None => None,
        };
        let iv = body.args.first().map(|a| a.id);
        let shared = op.attr_bool(attr::SHARED).unwrap_or(true);
        let num_ins = op.ins().len() as i64;
        let group = *self.next_group;
        *self.next_group += 1;

        let mut partials = Vec::new();
        for ((binding, spec), (s, e)) in bindings.iter().zip(&specs).zip(&ranges) {
            if s >= e {
                continue;
            }
            let (s, e) = (*s, *e);
            let mut subst = BTreeMap::new();
            let mut lowered = if spec.runs_on_host() {
                let body = clone_fresh(body, self.ids, &mut subst);
                HirOp::new(Opcode::ParLoop)
                    .with_attr(attr::LB, Attr::Int(s))
                    .with_attr(attr::UB, Attr::Int(e))
                    .with_region(body)
            } else {
                let t = self.ids.fresh(HirType::index());
                let c = self.ids.fresh(HirType::index());
                let global = self.ids.fresh(HirType::index());
                if let Some(iv) = iv {
                    subst.insert(iv, global.id);
                }
                let mut body = clone_fresh(body, self.ids, &mut subst);
                body.args = alloc::vec![t.clone()];
                body.ops.insert(0, const_op(s, c.clone()));
                body.ops.insert(
                    1,
                    HirOp::new(Opcode::AddI)
                        .with_operands([t.id, c.id])
                        .with_result(global),
                );
                HirOp::new(Opcode::DevLaunch)
                    .with_attr(attr::LB, Attr::Int(0))
                    .with_attr(attr::UB, Attr::Int(e - s))
                    .with_attr(attr::BASE, Attr::Int(s))
                    .with_attr(attr::SPACE_LB, Attr::Int(lb))
                    .with_attr(attr::SPACE_UB, Attr::Int(ub))
                    .with_region(body)
            };
            lowered = lowered
                .with_operands(op.operands.iter().copied())
                .with_attr(attr::DEVICE, Attr::Str(binding.target_id.clone()))
                .with_attr(attr::SHARED, Attr::Bool(shared))
                .with_attr(attr::NUM_INS, Attr::Int(num_ins))
                .with_attr(attr::GROUP, Attr::Int(group));
            if !binding.target_config.is_empty() {
                lowered = lowered.with_attr(attr::CONFIG, Attr::IntMap(binding.target_config.clone()));
            }
            if !spec.sha_accel {
                if let Some(b) = lowered.body_mut() {
                    b.walk_mut(&mut |o| {
                        if o.opcode == Opcode::CryptoDigest && o.attr_str(attr::VARIANT) == Some("accel") {
                            o.attrs.insert(attr::VARIANT.to_string(), Attr::Str(String::from("generic")));
                        }
                    });
                }
            }
            if let Some(r) = op.result() {
                let p = self.ids.fresh(r.ty.clone());
                partials.push(p.id);
                lowered = lowered.with_result(p);
            }
            lowered.span = op.span;
            out.push(lowered);
        }

        if let (Some(result), Some((kind, elem))) = (op.result(), reduce) {
            let identity = kind.identity(elem);
            if partials.is_empty() {
                out.push(const_op(identity, result.clone()));
                return Ok(());
            }
            let acc = self.ids.fresh(HirType::host_buffer(elem, 1));
            let zero = self.ids.fresh(HirType::index());
            let init = self.ids.fresh(result.ty.clone());
            out.push(HirOp::new(Opcode::MemrefAlloc).with_result(acc.clone()));
            out.push(const_op(0, zero.clone()));
            out.push(const_op(identity, init.clone()));
            out.push(HirOp::new(Opcode::Store).with_operands([init.id, acc.id, zero.id]));
            for p in partials {
                out.push(
                    HirOp::new(Opcode::AtomicRmw)
                        .with_operands([p, acc.id, zero.id])
                        .with_attr(attr::KIND, Attr::Str(kind.name().to_string())),
                );
            }
            out.push(
                HirOp::new(Opcode::Load)
                    .with_operands([acc.id, zero.id])
                    .with_result(result.clone()),
            );
            out.push(HirOp::new(Opcode::MemrefDealloc).with_operands([acc.id]));
        }
        Ok(())
    }
}
