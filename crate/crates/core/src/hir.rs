//! In-memory SSA intermediate representation.
//!
//! A [`HirModule`] holds functions; each function owns one body [`Block`]
//! whose arguments are the function parameters. Operations ([`HirOp`]) are
//! generic records of opcode, operands, results, attributes and nested
//! single-block regions, in the style of MLIR's generic operation form.
//!
//! Value ids are function-local dense integers. [`HirFunction::renumber`]
//! restores canonical numbering (parameters first, then definitions in
//! textual pre-order) after a transformation; the parser produces canonical
//! numbering directly, so structural equality of two canonical functions is
//! plain `==`.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

/// Attribute keys used by the opcode set.
pub mod attr {
    pub const VALUE: &str = "value";
    pub const KIND: &str = "kind";
    pub const DEVICE: &str = "device";
    pub const LB: &str = "lb";
    pub const UB: &str = "ub";
    pub const DEVICES: &str = "devices";
    pub const SHARED: &str = "shared";
    pub const NUM_INS: &str = "num_ins";
    pub const BASE: &str = "base";
    pub const SPACE_LB: &str = "space_lb";
    pub const SPACE_UB: &str = "space_ub";
    pub const CONFIG: &str = "config";
    pub const ALG: &str = "alg";
    pub const MSG_LEN: &str = "msg_len";
    pub const VARIANT: &str = "variant";
    /// Lowered loops sharing a group id run concurrently.
    pub const GROUP: &str = "group";
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum ScalarKind {
    I8,
    I32,
    I64,
    F64,
    Index,
}

impl ScalarKind {
    pub const ALL: [ScalarKind; 5] = [
        ScalarKind::I8,
        ScalarKind::I32,
        ScalarKind::I64,
        ScalarKind::F64,
        ScalarKind::Index,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScalarKind::I8 => "i8",
            ScalarKind::I32 => "i32",
            ScalarKind::I64 => "i64",
            ScalarKind::F64 => "f64",
            ScalarKind::Index => "index",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    /// Storage width of one element in bytes.
    pub fn byte_width(self) -> usize {
        match self {
            ScalarKind::I8 => 1,
            ScalarKind::I32 => 4,
            ScalarKind::I64 | ScalarKind::F64 | ScalarKind::Index => 8,
        }
    }

    pub fn is_integer(self) -> bool {
        !matches!(self, ScalarKind::F64)
    }

    /// Truncates `v` to this kind's width and sign-extends back to `i64`.
    pub fn wrap(self, v: i64) -> i64 {
        match self {
            ScalarKind::I8 => v as i8 as i64,
            ScalarKind::I32 => v as i32 as i64,
            _ => v,
        }
    }

    pub fn min_value(self) -> i64 {
        match self {
            ScalarKind::I8 => i8::MIN as i64,
            ScalarKind::I32 => i32::MIN as i64,
            _ => i64::MIN,
        }
    }

    pub fn max_value(self) -> i64 {
        match self {
            ScalarKind::I8 => i8::MAX as i64,
            ScalarKind::I32 => i32::MAX as i64,
            _ => i64::MAX,
        }
    }
}

impl fmt::Display for ScalarKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Memory space of a buffer: the id of the device that owns it.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MemSpace(String);

impl MemSpace {
    /// The reserved host memory space, valid in every module.
    pub const HOST: &'static str = "host";

    pub fn host() -> Self {
        MemSpace(Self::HOST.to_string())
    }

    pub fn new(id: impl Into<String>) -> Result<Self, HirError> {
        let id = id.into();
        if id.is_empty() {
            return Err(HirError::EmptyMemSpace);
        }
        Ok(MemSpace(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_host(&self) -> bool {
        self.0 == Self::HOST
    }
}

impl fmt::Display for MemSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum HirType {
    Scalar(ScalarKind),
    Buffer {
        elem: ScalarKind,
        len: u64,
        space: MemSpace,
    },
}

impl HirType {
    pub fn index() -> Self {
        HirType::Scalar(ScalarKind::Index)
    }

    pub fn host_buffer(elem: ScalarKind, len: u64) -> Self {
        HirType::Buffer {
            elem,
            len,
            space: MemSpace::host(),
        }
    }

    pub fn is_buffer(&self) -> bool {
        matches!(self, HirType::Buffer { .. })
    }

    pub fn scalar(&self) -> Option<ScalarKind> {
        match self {
            HirType::Scalar(k) => Some(*k),
            HirType::Buffer { .. } => None,
        }
    }

    /// Element kind of a buffer, or the kind of a scalar.
    pub fn elem(&self) -> ScalarKind {
        match self {
            HirType::Scalar(k) => *k,
            HirType::Buffer { elem, .. } => *elem,
        }
    }

    pub fn buffer_len(&self) -> Option<u64> {
        match self {
            HirType::Buffer { len, .. } => Some(*len),
            HirType::Scalar(_) => None,
        }
    }

    pub fn space(&self) -> Option<&MemSpace> {
        match self {
            HirType::Buffer { space, .. } => Some(space),
            HirType::Scalar(_) => None,
        }
    }

    /// Size in bytes of a buffer's storage.
    pub fn byte_size(&self) -> u64 {
        match self {
            HirType::Scalar(k) => k.byte_width() as u64,
            HirType::Buffer { elem, len, .. } => elem.byte_width() as u64 * len,
        }
    }
}

impl fmt::Display for HirType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HirType::Scalar(k) => write!(f, "{k}"),
            HirType::Buffer { elem, len, space } if space.is_host() => {
                write!(f, "buf<{elem}, {len}>")
            }
            HirType::Buffer { elem, len, space } => write!(f, "buf<{elem}, {len}, \"{space}\">"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ValueId(pub u32);

impl fmt::Display for ValueId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "%{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Value {
    pub id: ValueId,
    pub ty: HirType,
}

/// One entry of a `hyper.for` device list.
#[derive(Clone, Debug, PartialEq)]
pub struct DeviceBinding {
    pub target_id: String,
    pub duty_ratio: f64,
    pub target_config: BTreeMap<String, i64>,
}

impl DeviceBinding {
    pub fn new(target_id: impl Into<String>, duty_ratio: f64) -> Self {
        DeviceBinding {
            target_id: target_id.into(),
            duty_ratio,
            target_config: BTreeMap::new(),
        }
    }

    pub fn with_config(mut self, key: impl Into<String>, value: i64) -> Self {
        self.target_config.insert(key.into(), value);
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Attr {
    Int(i64),
    Float(f64),
    Bool(bool),
    Str(String),
    IntMap(BTreeMap<String, i64>),
    Bindings(Vec<DeviceBinding>),
}

macro_rules! opcodes {
    ($($variant:ident => $name:literal),* $(,)?) => {
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum Opcode {
            $($variant),*
        }

        impl Opcode {
            pub const ALL: &'static [Opcode] = &[$(Opcode::$variant),*];

            pub fn name(self) -> &'static str {
                match self {
                    $(Opcode::$variant => $name),*
                }
            }

            pub fn from_name(name: &str) -> Option<Self> {
                match name {
                    $($name => Some(Opcode::$variant),)*
                    _ => None,
                }
            }
        }
    };
}

opcodes! {
    Const => "const",
    AddI => "addi",
    MulI => "muli",
    Load => "load",
    Store => "store",
    MemrefAlloc => "memref.alloc",
    MemrefDealloc => "memref.dealloc",
    MemrefCopy => "memref.copy",
    AtomicRmw => "atomic_rmw",
    HyperAlloc => "hyper.alloc",
    HyperDealloc => "hyper.dealloc",
    HyperMemcpy => "hyper.memcpy",
    HyperFor => "hyper.for",
    HyperReduce => "hyper.reduce",
    HyperReduceReturn => "hyper.reduce.return",
    CryptoDigest => "crypto.digest",
    CryptoHashBatch => "crypto.hash_batch",
    DevLaunch => "dev.launch",
    ParLoop => "par.loop",
    Yield => "yield",
    Return => "return",
}

impl Opcode {
    pub fn is_terminator(self) -> bool {
        matches!(
            self,
            Opcode::Yield | Opcode::Return | Opcode::HyperReduceReturn
        )
    }

    /// Ops whose single region is a parallel loop body.
    pub fn is_loop(self) -> bool {
        matches!(self, Opcode::HyperFor | Opcode::ParLoop | Opcode::DevLaunch)
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Location of a parsed op in its source text.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct SourceSpan {
    pub start: usize,
    pub end: usize,
    pub line: u32,
    pub column: u32,
}

impl fmt::Display for SourceSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.column)
    }
}

/// Kinds accepted by `atomic_rmw`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RmwKind {
    Add,
    Min,
    Max,
}

impl RmwKind {
    pub fn name(self) -> &'static str {
        match self {
            RmwKind::Add => "add",
            RmwKind::Min => "min",
            RmwKind::Max => "max",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "add" => Some(RmwKind::Add),
            "min" => Some(RmwKind::Min),
            "max" => Some(RmwKind::Max),
            _ => None,
        }
    }

    pub fn identity(self, kind: ScalarKind) -> i64 {
        match self {
            RmwKind::Add => 0,
            RmwKind::Min => kind.max_value(),
            RmwKind::Max => kind.min_value(),
        }
    }

    pub fn combine(self, kind: ScalarKind, a: i64, b: i64) -> i64 {
        match self {
            RmwKind::Add => kind.wrap(a.wrapping_add(b)),
            RmwKind::Min => a.min(b),
            RmwKind::Max => a.max(b),
        }
    }
}

#[derive(Clone, Debug)]
pub struct HirOp {
    pub opcode: Opcode,
    pub operands: Vec<ValueId>,
    pub results: Vec<Value>,
    pub attrs: BTreeMap<String, Attr>,
    pub regions: Vec<Block>,
    pub span: Option<SourceSpan>,
}

impl PartialEq for HirOp {
    fn eq(&self, other: &Self) -> bool {
        self.opcode == other.opcode
            && self.operands == other.operands
            && self.results == other.results
            && self.attrs == other.attrs
            && self.regions == other.regions
    }
}

impl HirOp {
    pub fn new(opcode: Opcode) -> Self {
        HirOp {
            opcode,
            operands: Vec::new(),
            results: Vec::new(),
            attrs: BTreeMap::new(),
            regions: Vec::new(),
            span: None,
        }
    }

    pub fn with_operands(mut self, operands: impl IntoIterator<Item = ValueId>) -> Self {
        self.operands.extend(operands);
        self
    }

    pub fn with_result(mut self, result: Value) -> Self {
        self.results.push(result);
        self
    }

    pub fn with_attr(mut self, key: &str, value: Attr) -> Self {
        self.attrs.insert(key.to_string(), value);
        self
    }

    pub fn with_region(mut self, block: Block) -> Self {
        self.regions.push(block);
        self
    }

    pub fn attr_int(&self, key: &str) -> Option<i64> {
        match self.attrs.get(key) {
            Some(Attr::Int(v)) => Some(*v),
            _ => None,
        }
    }

    pub fn attr_str(&self, key: &str) -> Option<&str> {
        match self.attrs.get(key) {
            Some(Attr::Str(s)) => Some(s),
            _ => None,
        }
    }

    pub fn attr_bool(&self, key: &str) -> Option<bool> {
        match self.attrs.get(key) {
            Some(Attr::Bool(b)) => Some(*b),
            _ => None,
        }
    }

    pub fn bindings(&self) -> Option<&[DeviceBinding]> {
        match self.attrs.get(attr::DEVICES) {
            Some(Attr::Bindings(b)) => Some(b),
            _ => None,
        }
    }

    pub fn int_map(&self, key: &str) -> Option<&BTreeMap<String, i64>> {
        match self.attrs.get(key) {
            Some(Attr::IntMap(m)) => Some(m),
            _ => None,
        }
    }

    /// Iteration bounds `[lb, ub)` of a loop op.
    pub fn bounds(&self) -> Option<(i64, i64)> {
        Some((self.attr_int(attr::LB)?, self.attr_int(attr::UB)?))
    }

    fn num_ins(&self) -> usize {
        self.attr_int(attr::NUM_INS)
            .map(|n| (n.max(0) as usize).min(self.operands.len()))
            .unwrap_or(self.operands.len())
    }

    /// `mem_in` operands of a loop op.
    pub fn ins(&self) -> &[ValueId] {
        &self.operands[..self.num_ins()]
    }

    /// `mem_out` operands of a loop op.
    pub fn outs(&self) -> &[ValueId] {
        &self.operands[self.num_ins()..]
    }

    pub fn body(&self) -> Option<&Block> {
        self.regions.first()
    }

    pub fn body_mut(&mut self) -> Option<&mut Block> {
        self.regions.first_mut()
    }

    pub fn result(&self) -> Option<&Value> {
        self.results.first()
    }
}

/// A basic block: arguments plus an op list ending in a terminator.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Block {
    pub args: Vec<Value>,
    pub ops: Vec<HirOp>,
}

impl Block {
    pub fn new(args: Vec<Value>) -> Self {
        Block {
            args,
            ops: Vec::new(),
        }
    }

    /// Visits every op in pre-order, descending into regions.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a HirOp)) {
        for op in &self.ops {
            f(op);
            for region in &op.regions {
                region.walk(f);
            }
        }
    }

    pub fn walk_mut(&mut self, f: &mut impl FnMut(&mut HirOp)) {
        for op in &mut self.ops {
            f(op);
            for region in &mut op.regions {
                region.walk_mut(f);
            }
        }
    }

    /// Rewrites every use of `from` (in this block and nested regions) to `to`.
    pub fn replace_uses(&mut self, from: ValueId, to: ValueId) {
        self.walk_mut(&mut |op| {
            for operand in &mut op.operands {
                if *operand == from {
                    *operand = to;
                }
            }
        });
    }

    pub fn uses(&self, id: ValueId) -> bool {
        let mut found = false;
        self.walk(&mut |op| found |= op.operands.contains(&id));
        found
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HirFunction {
    pub name: String,
    pub arg_names: Vec<String>,
    /// Function body; its block arguments are the function parameters.
    pub body: Block,
}

impl HirFunction {
    pub fn args(&self) -> &[Value] {
        &self.body.args
    }

    /// Index of the parameter called `name`.
    pub fn arg_index(&self, name: &str) -> Option<usize> {
        self.arg_names.iter().position(|n| n == name)
    }

    /// One past the largest value id in use.
    pub fn value_count(&self) -> u32 {
        let mut max = self.body.args.iter().map(|v| v.id.0 + 1).max().unwrap_or(0);
        self.body.walk(&mut |op| {
            for r in &op.results {
                max = max.max(r.id.0 + 1);
            }
            for region in &op.regions {
                for a in &region.args {
                    max = max.max(a.id.0 + 1);
                }
            }
        });
        max
    }

    pub fn id_gen(&self) -> IdGen {
        IdGen(self.value_count())
    }

    /// Restores canonical dense numbering: parameters first, then op
    /// results, region arguments and region contents in pre-order.
    pub fn renumber(&mut self) {
        let mut map = BTreeMap::new();
        let mut next = 0u32;
        let mut assign = |id: ValueId, map: &mut BTreeMap<ValueId, ValueId>| {
            map.entry(id).or_insert_with(|| {
                let new = ValueId(next);
                next += 1;
                new
            });
        };
        for a in &self.body.args {
            assign(a.id, &mut map);
        }
        fn collect(
            block: &Block,
            map: &mut BTreeMap<ValueId, ValueId>,
            assign: &mut impl FnMut(ValueId, &mut BTreeMap<ValueId, ValueId>),
        ) {
            for op in &block.ops {
                for r in &op.results {
                    assign(r.id, map);
                }
                for region in &op.regions {
                    for a in &region.args {
                        assign(a.id, map);
                    }
                    collect(region, map, assign);
                }
            }
        }
        collect(&self.body, &mut map, &mut assign);
        // Dangling uses get ids past every definition so they stay dangling.
        self.body.walk(&mut |op| {
            for id in &op.operands {
                assign(*id, &mut map);
            }
        });

        let remap = |id: &mut ValueId| {
            if let Some(new) = map.get(id) {
                *id = *new;
            }
        };
        fn apply(block: &mut Block, remap: &impl Fn(&mut ValueId)) {
            for a in &mut block.args {
                remap(&mut a.id);
            }
            for op in &mut block.ops {
                op.operands.iter_mut().for_each(remap);
                for r in &mut op.results {
                    remap(&mut r.id);
                }
                for region in &mut op.regions {
                    apply(region, remap);
                }
            }
        }
        apply(&mut self.body, &remap);
    }

    /// Type of every value defined in the function, indexed by id.
    pub fn value_types(&self) -> BTreeMap<ValueId, HirType> {
        let mut types = BTreeMap::new();
        for a in &self.body.args {
            types.insert(a.id, a.ty.clone());
        }
        self.body.walk(&mut |op| {
            for r in &op.results {
                types.insert(r.id, r.ty.clone());
            }
            for region in &op.regions {
                for a in &region.args {
                    types.insert(a.id, a.ty.clone());
                }
            }
        });
        types
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct HirModule {
    pub functions: Vec<HirFunction>,
}

impl HirModule {
    pub fn new(functions: Vec<HirFunction>) -> Self {
        HirModule { functions }
    }

    pub fn function(&self, name: &str) -> Option<&HirFunction> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn main(&self) -> Option<&HirFunction> {
        self.function("main")
    }

    /// Number of ops in the module, including nested ones.
    pub fn op_count(&self) -> usize {
        let mut n = 0;
        for f in &self.functions {
            f.body.walk(&mut |_| n += 1);
        }
        n
    }

    pub fn renumber(&mut self) {
        self.functions.iter_mut().for_each(HirFunction::renumber);
    }
}

/// Allocator of fresh value ids within one function.
#[derive(Clone, Debug)]
pub struct IdGen(u32);

impl IdGen {
    pub fn starting_at(next: u32) -> Self {
        IdGen(next)
    }

    pub fn fresh(&mut self, ty: HirType) -> Value {
        let id = ValueId(self.0);
        self.0 += 1;
        Value { id, ty }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HirError {
    #[error("lower bound {lb} exceeds upper bound {ub}")]
    InvalidBounds { lb: i64, ub: i64 },
    #[error("hyper.for requires at least one device binding")]
    NoDevices,
    #[error("value {0} is not buffer-typed")]
    NotABuffer(ValueId),
    #[error("loop body must take exactly one index-typed induction variable")]
    BadInductionVar,
    #[error("memory space id must be non-empty")]
    EmptyMemSpace,
}

/// Builds a well-formed `hyper.for` op.
///
/// `body` must take the induction variable as its only argument and end
/// in `yield`; `result` is present when the body contains a `hyper.reduce`.
#[allow(clippy::too_many_arguments)]
pub fn make_for(
    lb: i64,
    ub: i64,
    devices: Vec<DeviceBinding>,
    is_shared_mem: bool,
    mem_in: &[Value],
    mem_out: &[Value],
    body: Block,
    result: Option<Value>,
) -> Result<HirOp, HirError> {
    if lb > ub {
        return Err(HirError::InvalidBounds { lb, ub });
    }
    if devices.is_empty() {
        return Err(HirError::NoDevices);
    }
    if let Some(v) = mem_in.iter().chain(mem_out).find(|v| !v.ty.is_buffer()) {
        return Err(HirError::NotABuffer(v.id));
    }
    if body.args.len() != 1 || body.args[0].ty != HirType::index() {
        return Err(HirError::BadInductionVar);
    }
    let mut op = HirOp::new(Opcode::HyperFor)
        .with_operands(mem_in.iter().chain(mem_out).map(|v| v.id))
        .with_attr(attr::LB, Attr::Int(lb))
        .with_attr(attr::UB, Attr::Int(ub))
        .with_attr(attr::DEVICES, Attr::Bindings(devices))
        .with_attr(attr::SHARED, Attr::Bool(is_shared_mem))
        .with_attr(attr::NUM_INS, Attr::Int(mem_in.len() as i64))
        .with_region(body);
    if let Some(r) = result {
        op = op.with_result(r);
    }
    Ok(op)
}

/// Incremental builder for [`HirFunction`]s.
///
/// Nested regions are built with [`FunctionBuilder::region`], which
/// collects ops pushed inside its closure into a separate block.
pub struct FunctionBuilder {
    name: String,
    arg_names: Vec<String>,
    args: Vec<Value>,
    ids: IdGen,
    stack: Vec<Vec<HirOp>>,
}

impl FunctionBuilder {
    pub fn new(name: impl Into<String>) -> Self {
        FunctionBuilder {
            name: name.into(),
            arg_names: Vec::new(),
            args: Vec::new(),
            ids: IdGen(0),
            stack: alloc::vec![Vec::new()],
        }
    }

    pub fn arg(&mut self, name: impl Into<String>, ty: HirType) -> Value {
        let v = self.ids.fresh(ty);
        self.arg_names.push(name.into());
        self.args.push(v.clone());
        v
    }

    pub fn fresh(&mut self, ty: HirType) -> Value {
        self.ids.fresh(ty)
    }

    pub fn push(&mut self, op: HirOp) {
        self.stack.last_mut().expect("builder stack").push(op);
    }

    /// Builds a nested block with the given arguments.
    pub fn region(&mut self, args: Vec<Value>, f: impl FnOnce(&mut Self)) -> Block {
        self.stack.push(Vec::new());
        f(self);
        let ops = self.stack.pop().expect("builder stack");
        Block { args, ops }
    }

    pub fn const_int(&mut self, value: i64, kind: ScalarKind) -> Value {
        let r = self.fresh(HirType::Scalar(kind));
        self.push(
            HirOp::new(Opcode::Const)
                .with_attr(attr::VALUE, Attr::Int(value))
                .with_result(r.clone()),
        );
        r
    }

    pub fn const_f64(&mut self, value: f64) -> Value {
        let r = self.fresh(HirType::Scalar(ScalarKind::F64));
        self.push(
            HirOp::new(Opcode::Const)
                .with_attr(attr::VALUE, Attr::Float(value))
                .with_result(r.clone()),
        );
        r
    }

    fn binary(&mut self, opcode: Opcode, a: &Value, b: &Value) -> Value {
        let r = self.fresh(a.ty.clone());
        self.push(
            HirOp::new(opcode)
                .with_operands([a.id, b.id])
                .with_result(r.clone()),
        );
        r
    }

    pub fn addi(&mut self, a: &Value, b: &Value) -> Value {
        self.binary(Opcode::AddI, a, b)
    }

    pub fn muli(&mut self, a: &Value, b: &Value) -> Value {
        self.binary(Opcode::MulI, a, b)
    }

    pub fn load(&mut self, buf: &Value, index: &Value) -> Value {
        let r = self.fresh(HirType::Scalar(buf.ty.elem()));
        self.push(
            HirOp::new(Opcode::Load)
                .with_operands([buf.id, index.id])
                .with_result(r.clone()),
        );
        r
    }

    pub fn store(&mut self, value: &Value, buf: &Value, index: &Value) {
        self.push(HirOp::new(Opcode::Store).with_operands([value.id, buf.id, index.id]));
    }

    pub fn atomic_rmw(&mut self, kind: RmwKind, value: &Value, buf: &Value, index: &Value) {
        self.push(
            HirOp::new(Opcode::AtomicRmw)
                .with_operands([value.id, buf.id, index.id])
                .with_attr(attr::KIND, Attr::Str(kind.name().to_string())),
        );
    }

    pub fn memref_alloc(&mut self, elem: ScalarKind, len: u64) -> Value {
        let r = self.fresh(HirType::host_buffer(elem, len));
        self.push(HirOp::new(Opcode::MemrefAlloc).with_result(r.clone()));
        r
    }

    pub fn hyper_alloc(&mut self, device: &str, elem: ScalarKind, len: u64) -> Value {
        let r = self.fresh(HirType::Buffer {
            elem,
            len,
            space: MemSpace(device.to_string()),
        });
        self.push(
            HirOp::new(Opcode::HyperAlloc)
                .with_attr(attr::DEVICE, Attr::Str(device.to_string()))
                .with_result(r.clone()),
        );
        r
    }

    pub fn memref_dealloc(&mut self, buf: &Value) {
        self.push(HirOp::new(Opcode::MemrefDealloc).with_operands([buf.id]));
    }

    pub fn hyper_dealloc(&mut self, buf: &Value) {
        self.push(HirOp::new(Opcode::HyperDealloc).with_operands([buf.id]));
    }

    pub fn memref_copy(&mut self, src: &Value, dst: &Value) {
        self.push(HirOp::new(Opcode::MemrefCopy).with_operands([src.id, dst.id]));
    }

    pub fn hyper_memcpy(&mut self, src: &Value, dst: &Value) {
        self.push(HirOp::new(Opcode::HyperMemcpy).with_operands([src.id, dst.id]));
    }

    pub fn yield_(&mut self) {
        self.push(HirOp::new(Opcode::Yield));
    }

    pub fn ret(&mut self, values: &[&Value]) {
        self.push(HirOp::new(Opcode::Return).with_operands(values.iter().map(|v| v.id)));
    }

    /// Builds a `hyper.for` whose body is produced by `body`, which receives
    /// the induction variable. The trailing `yield` is appended automatically.
    #[allow(clippy::too_many_arguments)]
    pub fn hyper_for(
        &mut self,
        lb: i64,
        ub: i64,
        devices: Vec<DeviceBinding>,
        shared: bool,
        mem_in: &[&Value],
        mem_out: &[&Value],
        result: Option<ScalarKind>,
        body: impl FnOnce(&mut Self, &Value),
    ) -> Result<Option<Value>, HirError> {
        let iv = self.fresh(HirType::index());
        let result = result.map(|k| self.fresh(HirType::Scalar(k)));
        let block = self.region(alloc::vec![iv.clone()], |b| {
            body(b, &iv);
            b.yield_();
        });
        let ins: Vec<Value> = mem_in.iter().map(|v| (*v).clone()).collect();
        let outs: Vec<Value> = mem_out.iter().map(|v| (*v).clone()).collect();
        let op = make_for(lb, ub, devices, shared, &ins, &outs, block, result.clone())?;
        self.push(op);
        Ok(result)
    }

    /// Emits `hyper.reduce %value` with the standard `atomic_rmw` combine body.
    pub fn hyper_reduce(&mut self, value: &Value, kind: RmwKind) {
        let ty = value.ty.clone();
        let lhs = self.fresh(ty.clone());
        let rhs = self.fresh(ty.clone());
        let combined = self.fresh(ty);
        let block = self.region(alloc::vec![lhs.clone(), rhs.clone()], |b| {
            b.push(
                HirOp::new(Opcode::AtomicRmw)
                    .with_operands([lhs.id, rhs.id])
                    .with_attr(attr::KIND, Attr::Str(kind.name().to_string()))
                    .with_result(combined.clone()),
            );
            b.push(HirOp::new(Opcode::HyperReduceReturn).with_operands([combined.id]));
        });
        self.push(
            HirOp::new(Opcode::HyperReduce)
                .with_operands([value.id])
                .with_region(block),
        );
    }

    pub fn finish(mut self) -> HirFunction {
        let ops = self.stack.pop().expect("builder stack");
        let mut f = HirFunction {
            name: self.name,
            arg_names: self.arg_names,
            body: Block {
                args: self.args,
                ops,
            },
        };
        f.renumber();
        f
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn make_for_rejects_inverted_bounds() {
        let body = Block::new(vec![Value {
            id: ValueId(0),
            ty: HirType::index(),
        }]);
        let err = make_for(5, 1, vec![DeviceBinding::new("cpu:0", 1.0)], true, &[], &[], body, None);
        assert_eq!(err, Err(HirError::InvalidBounds { lb: 5, ub: 1 }));
    }

    #[test]
    fn make_for_rejects_empty_device_list() {
        let body = Block::new(vec![Value {
            id: ValueId(0),
            ty: HirType::index(),
        }]);
        let err = make_for(0, 10, vec![], true, &[], &[], body, None);
        assert_eq!(err, Err(HirError::NoDevices));
    }

    #[test]
    fn make_for_rejects_scalar_mem_operands() {
        let body = Block::new(vec![Value {
            id: ValueId(0),
            ty: HirType::index(),
        }]);
        let scalar = Value {
            id: ValueId(3),
            ty: HirType::Scalar(ScalarKind::I64),
        };
        let err = make_for(0, 1, vec![DeviceBinding::new("cpu:0", 1.0)], false, &[scalar], &[], body, None);
        assert_eq!(err, Err(HirError::NotABuffer(ValueId(3))));
    }

    #[test]
    fn renumber_is_canonical_preorder() {
        let mut b = FunctionBuilder::new("main");
        let buf = b.arg("a", HirType::host_buffer(ScalarKind::I64, 4));
        let one = b.const_int(1, ScalarKind::I64);
        b.hyper_for(0, 4, vec![DeviceBinding::new("cpu:0", 1.0)], true, &[&buf], &[], None, |b, iv| {
            let x = b.load(&buf, iv);
            let y = b.addi(&x, &one);
            b.store(&y, &buf, iv);
        })
        .unwrap();
        b.ret(&[]);
        let f = b.finish();
        // a=0, const=1, induction var=2, load=3, addi=4
        let ids: Vec<u32> = f.value_types().keys().map(|v| v.0).collect();
        assert_eq!(ids, vec![0, 1, 2, 3, 4]);
        assert_eq!(f.value_count(), 5);
    }

    #[test]
    fn memspace_rejects_empty_id() {
        assert_eq!(MemSpace::new(""), Err(HirError::EmptyMemSpace));
        assert!(MemSpace::host().is_host());
    }

    #[test]
    fn wrap_truncates_to_width() {
        assert_eq!(ScalarKind::I8.wrap(200), -56);
        assert_eq!(ScalarKind::I32.wrap(1 << 32), 0);
        assert_eq!(ScalarKind::I64.wrap(i64::MAX), i64::MAX);
    }
}
