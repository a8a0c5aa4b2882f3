//! Data-management graph of one function: allocations are nodes and
//! `hyper.memcpy` ops are directed edges between them.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::hir::{HirFunction, Opcode, ValueId};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeKind {
    /// `hyper.alloc` (N_u)
    Device,
    /// `memref.alloc` or a host buffer parameter (N_v)
    Host,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeOrigin {
    /// Index of the allocating op in the function body.
    Op(usize),
    /// Index of the function parameter.
    Arg(usize),
}

pub type NodeId = usize;

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub value: ValueId,
    pub kind: NodeKind,
    pub origin: NodeOrigin,
    /// Memory space of the buffer.
    pub space: String,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct DataflowGraph {
    pub nodes: Vec<Node>,
    /// Device nodes in program order.
    pub nodes_u: Vec<NodeId>,
    /// Host nodes: parameters first, then allocations in program order.
    pub nodes_v: Vec<NodeId>,
    /// `(src, dst)` in program order of the copies.
    pub edges: Vec<(NodeId, NodeId)>,
    /// Body index of the `hyper.memcpy` behind each edge.
    pub edge_ops: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("operand {value} of hyper.memcpy (op {op}) is not a top-level allocation or parameter")]
    NotAnAlloc { op: usize, value: ValueId },
    #[error("hyper.memcpy (op {op}) must connect a device buffer and a host buffer")]
    SameSide { op: usize },
    #[error("hyper.memcpy nested inside a region references a graph node")]
    NestedCopy,
}

impl DataflowGraph {
    pub fn node_of(&self, value: ValueId) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.value == value)
    }

    pub fn outgoing(&self, n: NodeId) -> impl Iterator<Item = (usize, NodeId)> + '_ {
        self.edges
            .iter()
            .enumerate()
            .filter(move |(_, e)| e.0 == n)
            .map(|(i, e)| (i, e.1))
    }

    pub fn incoming(&self, n: NodeId) -> impl Iterator<Item = (usize, NodeId)> + '_ {
        self.edges
            .iter()
            .enumerate()
            .filter(move |(_, e)| e.1 == n)
            .map(|(i, e)| (i, e.0))
    }
}

/// Scans the top level of `func`: one node per `hyper.alloc`,
/// `memref.alloc` and host buffer parameter, one edge per `hyper.memcpy`.
pub fn build_dataflow_graph(func: &HirFunction) -> Result<DataflowGraph, GraphError> {
    let mut g = DataflowGraph::default();
    let mut by_value = BTreeMap::new();
    for (i, a) in func.body.args.iter().enumerate() {
        if let Some(space) = a.ty.space() {
            if space.is_host() {
                by_value.insert(a.id, g.nodes.len());
                g.nodes_v.push(g.nodes.len());
                g.nodes.push(Node {
                    value: a.id,
                    kind: NodeKind::Host,
                    origin: NodeOrigin::Arg(i),
                    space: String::from(space.as_str()),
                });
            }
        }
    }
    for (i, op) in func.body.ops.iter().enumerate() {
        let kind = match op.opcode {
            Opcode::HyperAlloc => NodeKind::Device,
            Opcode::MemrefAlloc => NodeKind::Host,
            _ => continue,
        };
        let Some(r) = op.results.first() else { continue };
        let id = g.nodes.len();
        by_value.insert(r.id, id);
        match kind {
            NodeKind::Device => g.nodes_u.push(id),
            NodeKind::Host => g.nodes_v.push(id),
        }
        g.nodes.push(Node {
            value: r.id,
            kind,
            origin: NodeOrigin::Op(i),
            space: r.ty.space().map(|s| String::from(s.as_str())).unwrap_or_default(),
        });
    }
    for (i, op) in func.body.ops.iter().enumerate() {
        if op.opcode == Opcode::HyperMemcpy {
            let node = |v: ValueId| by_value.get(&v).copied().ok_or(GraphError::NotAnAlloc { op: i, value: v });
            let src = node(op.operands[0])?;
            let dst = node(op.operands[1])?;
            if g.nodes[src].kind == g.nodes[dst].kind {
                return Err(GraphError::SameSide { op: i });
            }
            g.edges.push((src, dst));
            g.edge_ops.push(i);
        }
        for region in &op.regions {
            let mut nested = false;
            region.walk(&mut |inner| {
                nested |= inner.opcode == Opcode::HyperMemcpy
                    && inner.operands.iter().any(|v| by_value.contains_key(v));
            });
            if nested {
                return Err(GraphError::NestedCopy);
            }
        }
    }
    Ok(g)
}
