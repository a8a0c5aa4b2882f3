//! Pass manager and the module transformations.
//!
//! Pipelines are written as comma-separated pass names, e.g.
//! `host-mem-opt,lower-crypto,lower-hyper-for,lower-reduce`. The module is
//! verified after every pass.

pub mod dataflow;
pub mod host_mem_opt;
pub mod lower_crypto;
pub mod lower_for;
pub mod lower_reduce;

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use thiserror::Error;

use crate::device::DeviceTable;
use crate::hir::{attr, Block, HirModule, IdGen, Opcode, ValueId};
use crate::verify::{verify, Diagnostic};

pub use dataflow::{build_dataflow_graph, DataflowGraph, GraphError, NodeKind, NodeOrigin};
pub use host_mem_opt::{host_mem_opt, HostMemOpt};
pub use lower_crypto::{lower_crypto, LowerCrypto};
pub use lower_for::{lower_hyper_for, partition_ranges, LowerHyperFor};
pub use lower_reduce::{lower_reduce, LowerReduce};

/// Pipeline used when none is given.
pub const DEFAULT_PIPELINE: &str = "lower-crypto,host-mem-opt,lower-hyper-for,lower-reduce";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PassError {
    #[error("unknown pass `{0}`")]
    UnknownPass(String),
    #[error("empty pass pipeline")]
    EmptyPipeline,
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("unknown device `{0}`")]
    UnknownDevice(String),
    #[error("invalid device list: {0}")]
    Bindings(String),
    #[error("unsupported reduction: {0}")]
    Reduce(String),
    #[error("unknown hash algorithm `{0}`")]
    UnknownAlg(String),
    #[error("{0}")]
    Precondition(String),
    #[error("module is invalid after {pass}: {}", .diagnostics.first().map(|d| d.to_string()).unwrap_or_default())]
    Verify {
        pass: String,
        diagnostics: Vec<Diagnostic>,
    },
}

/// Inputs shared by all passes of one pipeline run.
#[derive(Clone, Copy, Debug)]
pub struct PassContext<'a> {
    pub devices: &'a DeviceTable,
    /// Forces the generic SHA-1 kernel even on hosts with `sha_accel`.
    pub no_sha_accel: bool,
}

pub trait Pass {
    fn name(&self) -> &'static str;
    fn run(&self, module: &mut HirModule, ctx: &PassContext<'_>) -> Result<(), PassError>;
}

/// What one pass did, counted as ops per opcode before and after.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PassStats {
    pub pass: &'static str,
    pub ops_before: usize,
    pub ops_after: usize,
    pub erased: usize,
    pub created: usize,
}

fn opcode_histogram(m: &HirModule) -> BTreeMap<Opcode, usize> {
    let mut h = BTreeMap::new();
    for f in &m.functions {
        f.body.walk(&mut |op| *h.entry(op.opcode).or_insert(0) += 1);
    }
    h
}

pub fn pass_by_name(name: &str) -> Option<Box<dyn Pass>> {
    Some(match name {
        "host-mem-opt" => Box::new(HostMemOpt),
        "lower-crypto" => Box::new(LowerCrypto),
        "lower-hyper-for" => Box::new(LowerHyperFor),
        "lower-reduce" => Box::new(LowerReduce),
        _ => return None,
    })
}

pub struct PassManager {
    passes: Vec<Box<dyn Pass>>,
}

impl PassManager {
    pub fn new() -> Self {
        PassManager { passes: Vec::new() }
    }

    pub fn add(&mut self, pass: Box<dyn Pass>) -> &mut Self {
        self.passes.push(pass);
        self
    }

    /// Builds a pipeline from `a,b,c`. Whitespace around names is ignored.
    pub fn from_spec(spec: &str) -> Result<Self, PassError> {
        let mut pm = PassManager::new();
        for name in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let pass = pass_by_name(name).ok_or_else(|| PassError::UnknownPass(name.to_string()))?;
            pm.add(pass);
        }
        if pm.passes.is_empty() {
            return Err(PassError::EmptyPipeline);
        }
        Ok(pm)
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.passes.iter().map(|p| p.name()).collect()
    }

    pub fn run(&self, module: &mut HirModule, ctx: &PassContext<'_>) -> Result<Vec<PassStats>, PassError> {
        let mut stats = Vec::with_capacity(self.passes.len());
        for pass in &self.passes {
            let before = opcode_histogram(module);
            pass.run(module, ctx)?;
            module.renumber();
            let diagnostics = verify(module);
            if !diagnostics.is_empty() {
                return Err(PassError::Verify {
                    pass: pass.name().to_string(),
                    diagnostics,
                });
            }
            let after = opcode_histogram(module);
            let mut erased = 0;
            let mut created = 0;
            for op in Opcode::ALL {
                let b = before.get(op).copied().unwrap_or(0);
                let a = after.get(op).copied().unwrap_or(0);
                erased += b.saturating_sub(a);
                created += a.saturating_sub(b);
            }
            stats.push(PassStats {
                pass: pass.name(),
                ops_before: before.values().sum(),
                ops_after: after.values().sum(),
                erased,
                created,
            });
        }
        Ok(stats)
    }
}

impl Default for PassManager {
    fn default() -> Self {
        Self::from_spec(DEFAULT_PIPELINE).expect("default pipeline")
    }
}

/// Copies `block`, giving every value it defines a fresh id. Uses of
/// values defined outside the block are kept; `subst` pre-seeds the
/// renaming (used to redirect the induction variable).
pub(crate) fn clone_fresh(block: &Block, ids: &mut IdGen, subst: &mut BTreeMap<ValueId, ValueId>) -> Block {
    let mut out = block.clone();
    fn rename(block: &mut Block, ids: &mut IdGen, subst: &mut BTreeMap<ValueId, ValueId>) {
        for a in &mut block.args {
            a.id = *subst.entry(a.id).or_insert_with(|| ids.fresh(a.ty.clone()).id);
        }
        for op in &mut block.ops {
            for o in &mut op.operands {
                if let Some(n) = subst.get(o) {
                    *o = *n;
                }
            }
            for region in &mut op.regions {
                rename(region, ids, subst);
            }
            for r in &mut op.results {
                let fresh = ids.fresh(r.ty.clone());
                subst.insert(r.id, fresh.id);
                r.id = fresh.id;
            }
        }
    }
    rename(&mut out, ids, subst);
    out
}

/// Index ranges `[start, end)` of the concurrent loop groups in `block`:
/// maximal runs of `par.loop` / `dev.launch` ops carrying the same `group`
/// attribute. A lowered loop without the attribute forms its own group.
pub fn loop_groups(block: &Block) -> Vec<(usize, usize)> {
    let is_loop = |i: usize| matches!(block.ops[i].opcode, Opcode::ParLoop | Opcode::DevLaunch);
    let group = |i: usize| block.ops[i].attr_int(attr::GROUP);
    let mut groups = Vec::new();
    let mut i = 0;
    while i < block.ops.len() {
        if !is_loop(i) {
            i += 1;
            continue;
        }
        let start = i;
        i += 1;
        if let Some(g) = group(start) {
            while i < block.ops.len() && is_loop(i) && group(i) == Some(g) {
                i += 1;
            }
        }
        groups.push((start, i));
    }
    groups
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pipeline_spec_parsing() {
        let pm = PassManager::from_spec("host-mem-opt, lower-crypto,lower-hyper-for,lower-reduce").unwrap();
        assert_eq!(pm.names(), ["host-mem-opt", "lower-crypto", "lower-hyper-for", "lower-reduce"]);
        assert!(matches!(PassManager::from_spec("lower-all"), Err(PassError::UnknownPass(p)) if p == "lower-all"));
        assert!(matches!(PassManager::from_spec(" , "), Err(PassError::EmptyPipeline)));
    }
}
