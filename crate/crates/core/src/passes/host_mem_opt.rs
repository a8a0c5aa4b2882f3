//! Host memory optimization.
//!
//! When a device buffer actually lives in host memory, its allocation and
//! the copies in and out of it are pure overhead. Every eligible device
//! node `u` of the dataflow graph is mapped onto a host node:
//!
//! - for each outgoing edge `(u, v)`: if some incoming edge `(w, u)` has
//!   `w != v`, add `(w, v)` and drop `(w, u)`; `u` maps to `w`. Otherwise
//!   `u` maps to `v`. Drop `(u, v)`.
//! - each incoming edge `(v, u)`: `u` maps to `v`; drop the edge.
//! - a node left without edges maps to a fresh host allocation.
//!
//! Nodes are visited in program order and, among several candidates, the
//! first edge in program order wins. Once `u` is mapped, its remaining
//! edges become copies from or to the mapped node. Surviving host-to-host
//! edges are emitted as `memref.copy`.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use super::dataflow::{build_dataflow_graph, DataflowGraph, GraphError, NodeId, NodeKind, NodeOrigin};
use super::{Pass, PassContext, PassError};
use crate::hir::{HirFunction, HirModule, HirOp, HirType, Opcode, ValueId};

pub struct HostMemOpt;

impl Pass for HostMemOpt {
    fn name(&self) -> &'static str {
        "host-mem-opt"
    }

    fn run(&self, module: &mut HirModule, ctx: &PassContext<'_>) -> Result<(), PassError> {
        for f in &mut module.functions {
            optimize_function(f, &|space| ctx.devices.host_mapped(space))?;
        }
        Ok(())
    }
}

/// Where an eligible device node ended up.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mapping {
    Node(NodeId),
    Fresh,
}

/// Outcome of running the graph algorithm, before IR rewriting.
#[derive(Clone, Debug, PartialEq)]
pub struct Simplified {
    pub mapping: BTreeMap<NodeId, Mapping>,
    /// Host-to-host copies that survive, keyed by the index of the
    /// `hyper.memcpy` op they replace.
    pub copies: BTreeMap<usize, (NodeId, NodeId)>,
    /// Graph edits performed; bounded by `|N_u| + |E|`.
    pub steps: usize,
}

/// Runs the node-elimination loop on `graph`. Device nodes for which
/// `eligible` is false keep their edges and are not mapped.
pub fn simplify(graph: &DataflowGraph, eligible: &dyn Fn(NodeId) -> bool) -> Simplified {
    let mut live = alloc::vec![true; graph.edges.len()];
    let mut mapping = BTreeMap::new();
    let mut copies = BTreeMap::new();
    let mut steps = 0;
    for &u in graph.nodes_u.iter().filter(|&&u| eligible(u)) {
        let mut rep: Option<NodeId> = None;
        let outgoing: Vec<(usize, NodeId)> = graph.outgoing(u).collect();
        for (e_out, v) in outgoing {
            match rep {
                None => {
                    let incoming = graph.incoming(u).find(|&(e, w)| live[e] && w != v);
                    if let Some((e_in, w)) = incoming {
                        copies.insert(graph.edge_ops[e_out], (w, v));
                        live[e_in] = false;
                        steps += 1;
                        rep = Some(w);
                    } else {
                        rep = Some(v);
                    }
                }
                Some(r) if r != v => {
                    copies.insert(graph.edge_ops[e_out], (r, v));
                }
                Some(_) => {}
            }
            live[e_out] = false;
            steps += 1;
        }
        let incoming: Vec<(usize, NodeId)> = graph.incoming(u).filter(|&(e, _)| live[e]).collect();
        for (e_in, x) in incoming {
            match rep {
                None => rep = Some(x),
                Some(r) if r != x => {
                    copies.insert(graph.edge_ops[e_in], (x, r));
                }
                Some(_) => {}
            }
            live[e_in] = false;
            steps += 1;
        }
        let m = match rep {
            Some(r) => Mapping::Node(r),
            None => {
                steps += 1;
                Mapping::Fresh
            }
        };
        mapping.insert(u, m);
    }
    Simplified {
        mapping,
        copies,
        steps,
    }
}

/// Applies the optimization to every device allocation of `module`,
/// whatever its target.
pub fn host_mem_opt(module: &mut HirModule) -> Result<(), GraphError> {
    for f in &mut module.functions {
        optimize_function(f, &|_| true)?;
    }
    Ok(())
}

/// Applies the optimization to device allocations whose memory space
/// satisfies `eligible`.
pub fn optimize_function(func: &mut HirFunction, eligible: &dyn Fn(&str) -> bool) -> Result<(), GraphError> {
    let any = func
        .body
        .ops
        .iter()
        .any(|op| op.opcode == Opcode::HyperAlloc && op.results.first().and_then(|r| r.ty.space()).is_some_and(|s| eligible(s.as_str())));
    if !any {
        return Ok(());
    }
    let graph = build_dataflow_graph(func)?;
    let simplified = simplify(&graph, &|u| eligible(&graph.nodes[u].space));
    rewrite(func, &graph, &simplified);
    Ok(())
}

fn rewrite(func: &mut HirFunction, graph: &DataflowGraph, s: &Simplified) {
    let mut ids = func.id_gen();
    let types = func.value_types();
    let old_ops = core::mem::take(&mut func.body.ops);
    let mut slots: Vec<Vec<HirOp>> = old_ops.into_iter().map(|op| alloc::vec![op]).collect();

    // Value each eliminated device buffer is replaced by.
    let mut replacement: BTreeMap<ValueId, ValueId> = BTreeMap::new();
    let mut fresh_values: BTreeSet<ValueId> = BTreeSet::new();
    // Current slot of each host allocation that may be hoisted.
    let mut alloc_slot: BTreeMap<ValueId, usize> = BTreeMap::new();
    for &v in &graph.nodes_v {
        if let NodeOrigin::Op(j) = graph.nodes[v].origin {
            alloc_slot.insert(graph.nodes[v].value, j);
        }
    }

    for (&u, mapping) in &s.mapping {
        let node = &graph.nodes[u];
        let NodeOrigin::Op(i) = node.origin else { continue };
        slots[i].clear();
        match *mapping {
            Mapping::Fresh => {
                let ty = match &types[&node.value] {
                    HirType::Buffer { elem, len, .. } => HirType::host_buffer(*elem, *len),
                    other => other.clone(),
                };
                let v = ids.fresh(ty);
                slots[i].push(HirOp::new(Opcode::MemrefAlloc).with_result(v.clone()));
                fresh_values.insert(v.id);
                replacement.insert(node.value, v.id);
            }
            Mapping::Node(r) => {
                let rv = graph.nodes[r].value;
                replacement.insert(node.value, rv);
                // The host buffer must exist wherever the device buffer did.
                if let Some(&j) = alloc_slot.get(&rv) {
                    if j > i {
                        let pos = slots[j].iter().position(|op| op.results.first().map(|r| r.id) == Some(rv));
                        if let Some(pos) = pos {
                            let op = slots[j].remove(pos);
                            slots[i].push(op);
                            alloc_slot.insert(rv, i);
                        }
                    }
                }
            }
        }
    }

    let eliminated: BTreeSet<ValueId> = replacement.keys().copied().collect();
    for (k, &op_index) in graph.edge_ops.iter().enumerate() {
        let (src, dst) = graph.edges[k];
        let touches = [src, dst]
            .iter()
            .any(|&n| graph.nodes[n].kind == NodeKind::Device && eliminated.contains(&graph.nodes[n].value));
        if !touches {
            continue;
        }
        slots[op_index].clear();
        if let Some(&(a, b)) = s.copies.get(&op_index) {
            let (a, b) = (graph.nodes[a].value, graph.nodes[b].value);
            slots[op_index].push(HirOp::new(Opcode::MemrefCopy).with_operands([a, b]));
        }
    }

    for slot in &mut slots {
        for op in slot.iter_mut() {
            if op.opcode == Opcode::HyperDealloc {
                if let Some(&r) = op.operands.first().and_then(|v| replacement.get(v)) {
                    if fresh_values.contains(&r) {
                        *op = HirOp::new(Opcode::MemrefDealloc).with_operands([r]);
                    } else {
                        op.opcode = Opcode::Yield; // marker, removed below
                        op.operands.clear();
                    }
                }
            }
        }
        slot.retain(|op| op.opcode != Opcode::Yield);
    }

    func.body.ops = slots.into_iter().flatten().collect();
    for (&from, &to) in &replacement {
        func.body.replace_uses(from, to);
    }
    let reps: BTreeSet<ValueId> = replacement.values().copied().collect();
    for r in reps {
        sink_dealloc(func, r);
    }
}

/// Moves the top-level `memref.dealloc` of `buf` after its last use.
fn sink_dealloc(func: &mut HirFunction, buf: ValueId) {
    let ops = &mut func.body.ops;
    let Some(d) = ops
        .iter()
        .position(|op| op.opcode == Opcode::MemrefDealloc && op.operands.first() == Some(&buf))
    else {
        return;
    };
    let last_use = ops
        .iter()
        .enumerate()
        .filter(|(i, op)| {
            *i != d && (op.operands.contains(&buf) || op.regions.iter().any(|r| r.uses(buf)))
        })
        .map(|(i, _)| i)
        .max();
    if let Some(l) = last_use {
        if l > d {
            let op = ops.remove(d);
            ops.insert(l, op);
        }
    }
}

/// Number of device allocations left at the top level of `func` whose
/// memory space satisfies `eligible`.
pub fn remaining_device_nodes(func: &HirFunction, eligible: &dyn Fn(&str) -> bool) -> usize {
    func.body
        .ops
        .iter()
        .filter(|op| op.opcode == Opcode::HyperAlloc)
        .filter(|op| op.results.first().and_then(|r| r.ty.space()).is_some_and(|s| eligible(s.as_str())))
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::{parse, print};

    fn opt(src: &str) -> HirModule {
        let mut m = parse(src).unwrap();
        host_mem_opt(&mut m).unwrap();
        m.renumber();
        assert_eq!(crate::verify(&m), alloc::vec![], "{}", print(&m));
        m
    }

    fn count(m: &HirModule, op: Opcode) -> usize {
        let mut n = 0;
        m.main().unwrap().body.walk(&mut |o| n += (o.opcode == op) as usize);
        n
    }

    #[test]
    fn in_place_pattern_maps_both_nodes_to_one_host_buffer() {
        let m = opt(r#"
func @main(%h0: buf<i64, 8>) {
  %u0 = hyper.alloc dev("acc:0") : buf<i64, 8>
  %u1 = hyper.alloc dev("acc:0") : buf<i64, 8>
  hyper.memcpy %h0, %u0
  hyper.for %i = 0 to 8 devices [{target="acc:0", ratio=1}] shared=true ins(%u0) outs(%u1) {
    %x = load %u0[%i] : i64
    %y = addi %x, %x : i64
    store %y, %u1[%i]
    yield
  }
  hyper.memcpy %u1, %h0
  hyper.dealloc %u0
  hyper.dealloc %u1
  return
}"#);
        assert_eq!(count(&m, Opcode::HyperAlloc), 0);
        assert_eq!(count(&m, Opcode::MemrefAlloc), 0);
        assert_eq!(count(&m, Opcode::MemrefCopy), 0);
        assert_eq!(count(&m, Opcode::HyperMemcpy), 0);
        let f = m.main().unwrap();
        assert_eq!(f.body.ops[0].operands, [f.body.args[0].id, f.body.args[0].id]);
    }

    #[test]
    fn copy_through_pattern_becomes_one_host_copy() {
        let m = opt(r#"
func @main(%h1: buf<i8, 4>) {
  %h0 = memref.alloc : buf<i8, 4>
  %u0 = hyper.alloc dev("acc:0") : buf<i8, 4>
  hyper.memcpy %h0, %u0
  hyper.memcpy %u0, %h1
  hyper.dealloc %u0
  memref.dealloc %h0
  return
}"#);
        let f = m.main().unwrap();
        let ops: Vec<Opcode> = f.body.ops.iter().map(|o| o.opcode).collect();
        assert_eq!(ops, [Opcode::MemrefAlloc, Opcode::MemrefCopy, Opcode::MemrefDealloc, Opcode::Return]);
        assert_eq!(f.body.ops[1].operands, [f.body.ops[0].results[0].id, f.body.args[0].id]);
    }

    #[test]
    fn isolated_device_buffer_gets_a_fresh_host_buffer() {
        let m = opt(r#"
func @main() {
  %u = hyper.alloc dev("acc:0") : buf<i32, 16>
  hyper.dealloc %u
  return
}"#);
        let f = m.main().unwrap();
        assert_eq!(f.body.ops[0].opcode, Opcode::MemrefAlloc);
        assert_eq!(f.body.ops[0].results[0].ty, HirType::host_buffer(crate::ScalarKind::I32, 16));
        assert_eq!(f.body.ops[1].opcode, Opcode::MemrefDealloc);
    }

    #[test]
    fn representative_allocation_is_hoisted() {
        let m = opt(r#"
func @main() {
  %u = hyper.alloc dev("acc:0") : buf<i64, 2>
  %c = const 0 : index
  %v = const 7 : i64
  store %v, %u[%c]
  %h = memref.alloc : buf<i64, 2>
  hyper.memcpy %u, %h
  hyper.dealloc %u
  memref.dealloc %h
  return
}"#);
        let f = m.main().unwrap();
        assert_eq!(f.body.ops[0].opcode, Opcode::MemrefAlloc);
        assert_eq!(count(&m, Opcode::MemrefAlloc), 1);
    }

    #[test]
    fn ineligible_targets_are_untouched() {
        let src = r#"
func @main(%h: buf<i8, 4>) {
  %u = hyper.alloc dev("acc:0") : buf<i8, 4>
  hyper.memcpy %h, %u
  hyper.dealloc %u
  return
}"#;
        let mut m = parse(src).unwrap();
        let before = m.clone();
        for f in &mut m.functions {
            optimize_function(f, &|s| s != "acc:0").unwrap();
        }
        assert_eq!(m, before);
    }

    #[test]
    fn copies_from_non_allocations_are_rejected() {
        let src = r#"
func @main() {
  %u = hyper.alloc dev("acc:0") : buf<i8, 4>
  %w = hyper.alloc dev("acc:0") : buf<i8, 4>
  hyper.memcpy %u, %w
  return
}"#;
        let mut m = parse(src).unwrap();
        assert!(matches!(host_mem_opt(&mut m), Err(GraphError::SameSide { .. })));
    }
}
