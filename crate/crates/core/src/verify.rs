//! Structural verifier.
//!
//! [`verify`] never aborts: every violated rule produces one [`Diagnostic`]
//! and checking continues with the next op.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::crypto::HashAlg;
use crate::hir::{
    attr, Attr, Block, DeviceBinding, HirFunction, HirModule, HirOp, HirType, Opcode, RmwKind,
    ScalarKind, SourceSpan, ValueId,
};

/// Tolerance on the sum of duty ratios within one device list.
pub const RATIO_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Diagnostic {
    pub severity: Severity,
    pub function: String,
    /// Position of the op: index in the function body, then region/op
    /// indices for nested ops.
    pub op_path: Vec<usize>,
    pub opcode: Option<Opcode>,
    pub span: Option<SourceSpan>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{sev}: @{}", self.function)?;
        if !self.op_path.is_empty() {
            let path: Vec<String> = self.op_path.iter().map(|i| format!("{i}")).collect();
            write!(f, "[{}]", path.join("."))?;
        }
        if let Some(op) = self.opcode {
            write!(f, " {op}")?;
        }
        if let Some(span) = self.span {
            write!(f, " (line {}, column {})", span.line, span.column)?;
        }
        write!(f, ": {}", self.message)
    }
}

/// Checks the structural invariants of a module.
///
/// Returns an empty list iff the module is well formed.
pub fn verify(module: &HirModule) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    let mut names = BTreeSet::new();
    for func in &module.functions {
        if !names.insert(func.name.as_str()) {
            diags.push(Diagnostic {
                severity: Severity::Error,
                function: func.name.clone(),
                op_path: Vec::new(),
                opcode: None,
                span: None,
                message: format!("duplicate function @{}", func.name),
            });
        }
        FunctionVerifier::new(func, &mut diags).run();
    }
    if module.main().is_none() {
        diags.push(Diagnostic {
            severity: Severity::Error,
            function: String::from("main"),
            op_path: Vec::new(),
            opcode: None,
            span: None,
            message: String::from("module has no function named @main"),
        });
    }
    diags
}

/// Checks one device list: distinct targets, ratios in `[0, 1]` summing to 1.
pub fn check_bindings(bindings: &[DeviceBinding]) -> Result<(), String> {
    if bindings.is_empty() {
        return Err(String::from("device list is empty"));
    }
    let mut seen = BTreeSet::new();
    for b in bindings {
        if b.target_id.is_empty() {
            return Err(String::from("device target id must be non-empty"));
        }
        if !seen.insert(b.target_id.as_str()) {
            return Err(format!("device target {:?} listed twice", b.target_id));
        }
        if !(0.0..=1.0).contains(&b.duty_ratio) {
            return Err(format!(
                "duty ratio {} for {:?} is outside [0, 1]",
                b.duty_ratio, b.target_id
            ));
        }
    }
    let sum: f64 = bindings.iter().map(|b| b.duty_ratio).sum();
    if (sum - 1.0).abs() > RATIO_SUM_TOLERANCE {
        return Err(format!("duty ratios sum to {sum}"));
    }
    Ok(())
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum BlockKind {
    Function,
    Loop,
    Reduce,
}

struct FunctionVerifier<'a> {
    func: &'a HirFunction,
    diags: &'a mut Vec<Diagnostic>,
    defined: BTreeSet<ValueId>,
    scopes: Vec<BTreeMap<ValueId, HirType>>,
    path: Vec<usize>,
}

impl<'a> FunctionVerifier<'a> {
    fn new(func: &'a HirFunction, diags: &'a mut Vec<Diagnostic>) -> Self {
        FunctionVerifier {
            func,
            diags,
            defined: BTreeSet::new(),
            scopes: Vec::new(),
            path: Vec::new(),
        }
    }

    fn run(mut self) {
        if self.func.arg_names.len() != self.func.body.args.len() {
            self.error_at(None, "parameter names do not match parameter count");
        }
        let mut seen = BTreeSet::new();
        for name in &self.func.arg_names {
            let valid = name.starts_with(|c: char| c.is_ascii_alphabetic())
                && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
            if !valid {
                self.error_at(None, format!("parameter name {name:?} is not an identifier"));
            } else if !seen.insert(name.as_str()) {
                self.error_at(None, format!("parameter name {name:?} is used twice"));
            }
        }
        self.block(&self.func.body, BlockKind::Function);
    }

    fn error_at(&mut self, op: Option<&HirOp>, message: impl Into<String>) {
        self.diags.push(Diagnostic {
            severity: Severity::Error,
            function: self.func.name.clone(),
            op_path: self.path.clone(),
            opcode: op.map(|o| o.opcode),
            span: op.and_then(|o| o.span),
            message: message.into(),
        });
    }

    fn define(&mut self, op: Option<&HirOp>, id: ValueId, ty: &HirType) {
        if !self.defined.insert(id) {
            self.error_at(op, format!("value {id} is defined more than once"));
        }
        if let HirType::Buffer { space, .. } = ty {
            if space.as_str().is_empty() {
                self.error_at(op, "buffer memory space must be non-empty");
            }
        }
        self.scopes
            .last_mut()
            .expect("scope")
            .insert(id, ty.clone());
    }

    fn lookup(&self, id: ValueId) -> Option<&HirType> {
        self.scopes.iter().rev().find_map(|s| s.get(&id))
    }

    fn block(&mut self, block: &Block, kind: BlockKind) {
        self.scopes.push(BTreeMap::new());
        for arg in &block.args {
            self.define(None, arg.id, &arg.ty);
        }
        for (i, op) in block.ops.iter().enumerate() {
            self.path.push(i);
            let last = i + 1 == block.ops.len();
            if op.opcode.is_terminator() && !last {
                self.error_at(Some(op), "terminator must be the last op of its block");
            }
            self.op(op, kind);
            self.path.pop();
        }
        let expected = match kind {
            BlockKind::Function => Opcode::Return,
            BlockKind::Loop => Opcode::Yield,
            BlockKind::Reduce => Opcode::HyperReduceReturn,
        };
        match block.ops.last() {
            Some(op) if op.opcode == expected => {}
            Some(op) => {
                self.path.push(block.ops.len() - 1);
                self.error_at(Some(op), format!("block must end in {expected}"));
                self.path.pop();
            }
            None => self.error_at(None, format!("empty block must end in {expected}")),
        }
        self.scopes.pop();
    }

    fn operand_types(&mut self, op: &HirOp) -> Option<Vec<HirType>> {
        let mut types = Vec::with_capacity(op.operands.len());
        let mut ok = true;
        for id in &op.operands {
            match self.lookup(*id).cloned() {
                Some(t) => types.push(t),
                None => {
                    let msg = if self.defined.contains(id) {
                        format!("value {id} is used outside the region that defines it")
                    } else {
                        format!("use of undefined value {id}")
                    };
                    self.error_at(Some(op), msg);
                    ok = false;
                }
            }
        }
        ok.then_some(types)
    }

    fn op(&mut self, op: &HirOp, kind: BlockKind) {
        let types = self.operand_types(op);
        if let Some(types) = &types {
            if let Err(msg) = self.signature(op, types, kind) {
                self.error_at(Some(op), msg);
            }
        }
        match op.opcode {
            Opcode::HyperReduce if kind != BlockKind::Loop => {
                self.error_at(Some(op), "hyper.reduce must be a sub-operation of hyper.for");
            }
            Opcode::Return if kind != BlockKind::Function => {
                self.error_at(Some(op), "return is only valid in a function body");
            }
            Opcode::Yield if kind != BlockKind::Loop => {
                self.error_at(Some(op), "yield is only valid in a loop body");
            }
            Opcode::HyperReduceReturn if kind != BlockKind::Reduce => {
                self.error_at(Some(op), "hyper.reduce.return is only valid in a hyper.reduce region");
            }
            _ => {}
        }
        let expected_regions = match op.opcode {
            Opcode::HyperFor | Opcode::ParLoop | Opcode::DevLaunch | Opcode::HyperReduce => 1,
            _ => 0,
        };
        if op.regions.len() != expected_regions {
            self.error_at(
                Some(op),
                format!("expected {expected_regions} region(s), found {}", op.regions.len()),
            );
        }
        for (ri, region) in op.regions.iter().enumerate() {
            self.path.push(ri);
            let region_kind = if op.opcode == Opcode::HyperReduce {
                BlockKind::Reduce
            } else {
                BlockKind::Loop
            };
            self.block(region, region_kind);
            self.path.pop();
        }
        for r in &op.results {
            self.define(Some(op), r.id, &r.ty);
        }
    }

    fn signature(&self, op: &HirOp, types: &[HirType], ctx: BlockKind) -> Result<(), String> {
        let arity = |n: usize| -> Result<(), String> {
            if types.len() != n {
                return Err(format!("expects {n} operand(s), found {}", types.len()));
            }
            Ok(())
        };
        let results = |n: usize| -> Result<(), String> {
            if op.results.len() != n {
                return Err(format!("expects {n} result(s), found {}", op.results.len()));
            }
            Ok(())
        };
        let index_operand = |t: &HirType| -> Result<(), String> {
            if *t != HirType::index() {
                return Err(format!("index operand must have type index, found {t}"));
            }
            Ok(())
        };
        let buffer = |t: &HirType| -> Result<(ScalarKind, u64), String> {
            match t {
                HirType::Buffer { elem, len, .. } => Ok((*elem, *len)),
                other => Err(format!("expected a buffer operand, found {other}")),
            }
        };
        match op.opcode {
            Opcode::Const => {
                arity(0)?;
                results(1)?;
                let kind = op.results[0]
                    .ty
                    .scalar()
                    .ok_or("const result must be scalar")?;
                match (op.attrs.get(attr::VALUE), kind) {
                    (Some(Attr::Float(_)), ScalarKind::F64) => Ok(()),
                    (Some(Attr::Int(v)), k) if k.is_integer() => {
                        if k.wrap(*v) != *v {
                            return Err(format!("constant {v} does not fit in {k}"));
                        }
                        Ok(())
                    }
                    _ => Err(format!("const of type {kind} has a missing or mistyped value")),
                }
            }
            Opcode::AddI | Opcode::MulI => {
                arity(2)?;
                results(1)?;
                if types[0] != types[1] || types[0] != op.results[0].ty {
                    return Err(String::from("operands and result must share one type"));
                }
                match types[0].scalar() {
                    Some(k) if k.is_integer() => Ok(()),
                    _ => Err(format!("expects integer operands, found {}", types[0])),
                }
            }
            Opcode::Load => {
                arity(2)?;
                results(1)?;
                let (elem, _) = buffer(&types[0])?;
                index_operand(&types[1])?;
                if op.results[0].ty != HirType::Scalar(elem) {
                    return Err(format!("result type must be {elem}"));
                }
                Ok(())
            }
            Opcode::Store => {
                arity(3)?;
                results(0)?;
                let (elem, _) = buffer(&types[1])?;
                index_operand(&types[2])?;
                if types[0] != HirType::Scalar(elem) {
                    return Err(format!("stored value must be {elem}, found {}", types[0]));
                }
                Ok(())
            }
            Opcode::MemrefAlloc => {
                arity(0)?;
                results(1)?;
                match op.results[0].ty.space() {
                    Some(s) if s.is_host() => Ok(()),
                    Some(s) => Err(format!("memref.alloc must allocate host memory, not {s}")),
                    None => Err(String::from("memref.alloc must produce a buffer")),
                }
            }
            Opcode::HyperAlloc => {
                arity(0)?;
                results(1)?;
                let device = op
                    .attr_str(attr::DEVICE)
                    .ok_or("hyper.alloc requires a device attribute")?;
                match op.results[0].ty.space() {
                    Some(s) if s.as_str() == device && !device.is_empty() => Ok(()),
                    Some(s) => Err(format!("result space {s} does not match device {device:?}")),
                    None => Err(String::from("hyper.alloc must produce a buffer")),
                }
            }
            Opcode::MemrefDealloc | Opcode::HyperDealloc => {
                arity(1)?;
                results(0)?;
                buffer(&types[0]).map(|_| ())
            }
            Opcode::MemrefCopy | Opcode::HyperMemcpy => {
                arity(2)?;
                results(0)?;
                let a = buffer(&types[0])?;
                let b = buffer(&types[1])?;
                if a != b {
                    return Err(format!("copy between mismatched buffers {} and {}", types[0], types[1]));
                }
                Ok(())
            }
            Opcode::AtomicRmw => {
                let kind = op.attr_str(attr::KIND).unwrap_or("");
                if RmwKind::from_name(kind).is_none() {
                    return Err(format!("unknown atomic_rmw kind {kind:?}"));
                }
                if types.len() == 2 {
                    if ctx != BlockKind::Reduce {
                        return Err(String::from(
                            "two-operand atomic_rmw is only valid in a hyper.reduce region",
                        ));
                    }
                    results(1)?;
                    if types[0] != types[1] || types[0] != op.results[0].ty {
                        return Err(String::from("combine operands and result must share one type"));
                    }
                    return Ok(());
                }
                arity(3)?;
                results(0)?;
                let (elem, _) = buffer(&types[1])?;
                index_operand(&types[2])?;
                if !elem.is_integer() {
                    return Err(format!("atomic_rmw requires integer elements, found {elem}"));
                }
                if types[0] != HirType::Scalar(elem) {
                    return Err(format!("value must be {elem}, found {}", types[0]));
                }
                Ok(())
            }
            Opcode::HyperFor => {
                let (lb, ub) = op.bounds().ok_or("hyper.for requires integer lb/ub")?;
                if lb > ub {
                    return Err(format!("lower bound {lb} exceeds upper bound {ub}"));
                }
                let bindings = op.bindings().ok_or("hyper.for requires a devices list")?;
                check_bindings(bindings)?;
                op.attr_bool(attr::SHARED)
                    .ok_or("hyper.for requires a shared flag")?;
                self.loop_common(op, types, ub - lb)
            }
            Opcode::ParLoop => {
                let (lb, ub) = op.bounds().ok_or("par.loop requires integer lb/ub")?;
                if lb > ub {
                    return Err(format!("lower bound {lb} exceeds upper bound {ub}"));
                }
                op.attr_str(attr::DEVICE).ok_or("par.loop requires a device")?;
                self.loop_common(op, types, 0)
            }
            Opcode::DevLaunch => {
                let (lb, ub) = op.bounds().ok_or("dev.launch requires integer lb/ub")?;
                if lb != 0 || ub < 0 {
                    return Err(format!("dev.launch iterates a local range [0, n), found [{lb}, {ub})"));
                }
                op.attr_str(attr::DEVICE).ok_or("dev.launch requires a device")?;
                let base = op.attr_int(attr::BASE).ok_or("dev.launch requires a base")?;
                let space_lb = op.attr_int(attr::SPACE_LB).ok_or("dev.launch requires space_lb")?;
                let space_ub = op.attr_int(attr::SPACE_UB).ok_or("dev.launch requires space_ub")?;
                if base < space_lb || base + ub > space_ub {
                    return Err(format!(
                        "launch range [{base}, {}) escapes iteration space [{space_lb}, {space_ub})",
                        base + ub
                    ));
                }
                op.attr_bool(attr::SHARED)
                    .ok_or("dev.launch requires a shared flag")?;
                self.loop_common(op, types, space_ub - space_lb)
            }
            Opcode::HyperReduce => {
                arity(1)?;
                results(0)?;
                if types[0].is_buffer() {
                    return Err(String::from("hyper.reduce operand must be scalar"));
                }
                let block = op.regions.first().ok_or("hyper.reduce requires a region")?;
                if block.args.len() != 2 || block.args[0].ty != block.args[1].ty {
                    return Err(String::from(
                        "hyper.reduce region must take two arguments of identical type",
                    ));
                }
                if block.args[0].ty != types[0] {
                    return Err(format!(
                        "hyper.reduce region arguments must have the operand type {}",
                        types[0]
                    ));
                }
                Ok(())
            }
            Opcode::HyperReduceReturn => {
                arity(1)?;
                results(0)?;
                if types[0].is_buffer() {
                    return Err(String::from("hyper.reduce.return operand must be scalar"));
                }
                Ok(())
            }
            Opcode::CryptoDigest => {
                arity(3)?;
                results(0)?;
                let alg = op.attr_str(attr::ALG).unwrap_or("");
                if HashAlg::from_name(alg).is_none() {
                    return Err(format!("unknown hash algorithm {alg:?}"));
                }
                match op.attr_str(attr::VARIANT) {
                    Some("generic") | Some("accel") => {}
                    other => return Err(format!("unknown digest variant {other:?}")),
                }
                match op.attr_int(attr::MSG_LEN) {
                    Some(n) if n > 0 => {}
                    _ => return Err(String::from("msg_len must be a positive integer")),
                }
                for t in &types[..2] {
                    if buffer(t)?.0 != ScalarKind::I8 {
                        return Err(format!("digest buffers must hold i8, found {t}"));
                    }
                }
                index_operand(&types[2])
            }
            Opcode::CryptoHashBatch => {
                arity(2)?;
                results(0)?;
                op.attr_str(attr::ALG).ok_or("crypto.hash_batch requires alg")?;
                let msg_len = match op.attr_int(attr::MSG_LEN) {
                    Some(n) if n > 0 => n as u64,
                    _ => return Err(String::from("msg_len must be a positive integer")),
                };
                let (me, mlen) = buffer(&types[0])?;
                let (oe, olen) = buffer(&types[1])?;
                if me != ScalarKind::I8 || oe != ScalarKind::I8 {
                    return Err(String::from("hash_batch buffers must hold i8"));
                }
                if mlen % msg_len != 0 {
                    return Err(format!("message buffer length {mlen} is not a multiple of {msg_len}"));
                }
                if let Some(alg) = op.attr_str(attr::ALG).and_then(HashAlg::from_name) {
                    let want = mlen / msg_len * alg.digest_len() as u64;
                    if olen != want {
                        return Err(format!("digest buffer must hold {want} bytes, found {olen}"));
                    }
                }
                if let Some(Attr::Bindings(b)) = op.attrs.get(attr::DEVICES) {
                    check_bindings(b)?;
                }
                Ok(())
            }
            Opcode::Yield => {
                arity(0)?;
                results(0)
            }
            Opcode::Return => results(0),
        }
    }

    /// Checks shared by the three loop ops. `trip` is the partitioned
    /// iteration-space size (0 disables the divisibility check).
    fn loop_common(&self, op: &HirOp, types: &[HirType], trip: i64) -> Result<(), String> {
        for t in types {
            if !t.is_buffer() {
                return Err(format!("mem_in/mem_out operands must be buffers, found {t}"));
            }
        }
        let shared = op.attr_bool(attr::SHARED).unwrap_or(true);
        if !shared && trip > 0 {
            for t in types {
                let len = t.buffer_len().unwrap_or(0);
                if len % trip as u64 != 0 {
                    return Err(format!(
                        "partitioned buffer {t} is not divisible by the trip count {trip}"
                    ));
                }
            }
        }
        let body = op.regions.first().ok_or("loop requires a body region")?;
        if body.args.len() != 1 || body.args[0].ty != HirType::index() {
            return Err(String::from(
                "loop body must take exactly one index-typed induction variable",
            ));
        }
        let reduces: Vec<&HirOp> = body
            .ops
            .iter()
            .filter(|o| o.opcode == Opcode::HyperReduce)
            .collect();
        match (op.results.len(), reduces.len()) {
            (0, 0) => Ok(()),
            (1, 1) => {
                let operand = reduces[0].operands[0];
                let ty = body
                    .ops
                    .iter()
                    .flat_map(|o| o.results.iter())
                    .chain(body.args.iter())
                    .find(|v| v.id == operand)
                    .map(|v| &v.ty)
                    .or_else(|| self.lookup(operand));
                if ty != Some(&op.results[0].ty) {
                    return Err(String::from("loop result type must match the reduced value type"));
                }
                Ok(())
            }
            (0, _) => Err(String::from("hyper.reduce in a loop without a result")),
            (1, _) => Err(String::from("a loop with a result needs exactly one hyper.reduce")),
            (n, _) => Err(format!("loops produce at most one result, found {n}")),
        }
    }
}
