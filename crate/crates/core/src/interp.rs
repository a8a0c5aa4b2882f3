//! Sequential reference interpreter.
//!
//! Runs any verified module, lowered or not, one iteration at a time.
//! Device buffers are ordinary buffers here, so the interpreter defines the
//! meaning that optimizations and the parallel runtime must preserve.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use thiserror::Error;

use crate::crypto::{self, HashAlg};
use crate::hir::{attr, Attr, Block, HirModule, HirOp, HirType, Opcode, RmwKind, ScalarKind, SourceSpan, ValueId};

/// A buffer's contents, one `i64` slot per element. Integer elements are
/// kept sign-extended; `f64` elements hold their bit pattern.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Buffer {
    pub elem: ScalarKind,
    pub data: Vec<i64>,
}

impl Buffer {
    pub fn zeroed(elem: ScalarKind, len: usize) -> Self {
        Buffer {
            elem,
            data: alloc::vec![0; len],
        }
    }

    pub fn from_i64s(elem: ScalarKind, values: &[i64]) -> Self {
        Buffer {
            elem,
            data: values.iter().map(|v| elem.wrap(*v)).collect(),
        }
    }

    pub fn from_bytes(elem: ScalarKind, bytes: &[u8]) -> Option<Self> {
        let w = elem.byte_width();
        if !bytes.len().is_multiple_of(w) {
            return None;
        }
        let data = bytes
            .chunks_exact(w)
            .map(|c| {
                let mut b = [0u8; 8];
                b[..w].copy_from_slice(c);
                if w < 8 && c[w - 1] & 0x80 != 0 {
                    b[w..].fill(0xff);
                }
                i64::from_le_bytes(b)
            })
            .collect();
        Some(Buffer { elem, data })
    }

    /// Little-endian element bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let w = self.elem.byte_width();
        let mut out = Vec::with_capacity(self.data.len() * w);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes()[..w]);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Data {
    Scalar(ScalarKind, i64),
    Buffer(Buffer),
}

impl Data {
    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            Data::Scalar(k, v) => v.to_le_bytes()[..k.byte_width()].to_vec(),
            Data::Buffer(b) => b.to_bytes(),
        }
    }
}

/// Observable result of running `main`: returned values and the final
/// contents of every buffer parameter.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Outcome {
    pub returns: Vec<Data>,
    pub args: Vec<(String, Data)>,
}

impl Outcome {
    /// Byte serialization used for exact comparisons.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for d in self.returns.iter().chain(self.args.iter().map(|(_, d)| d)) {
            let b = d.to_bytes();
            out.extend_from_slice(&(b.len() as u64).to_le_bytes());
            out.extend_from_slice(&b);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InterpError {
    #[error("module has no main function")]
    NoMain,
    #[error("missing input `{0}`")]
    MissingInput(String),
    #[error("input `{name}` does not match parameter type {expected}")]
    InputMismatch { name: String, expected: HirType },
    #[error("{}{opcode}: index {index} out of bounds for length {len}", loc(.span))]
    OutOfBounds {
        opcode: Opcode,
        index: i64,
        len: usize,
        span: Option<SourceSpan>,
    },
    #[error("{}{opcode}: buffer used after dealloc", loc(.span))]
    Freed { opcode: Opcode, span: Option<SourceSpan> },
    #[error("{}{opcode}: {message}", loc(.span))]
    Unsupported {
        opcode: Opcode,
        message: String,
        span: Option<SourceSpan>,
    },
}

fn loc(span: &Option<SourceSpan>) -> String {
    match span {
        Some(s) => alloc::format!("{}:{}: ", s.line, s.column),
        None => String::new(),
    }
}

#[derive(Clone, Copy, Debug)]
enum Slot {
    Scalar(i64),
    Buf(usize),
}

struct Machine {
    env: BTreeMap<ValueId, Slot>,
    heap: Vec<Option<Buffer>>,
}

enum Flow {
    Next,
    Return(Vec<ValueId>),
}

/// Runs `main` with `inputs` keyed by parameter name.
pub fn interpret(module: &HirModule, inputs: &BTreeMap<String, Data>) -> Result<Outcome, InterpError> {
    let main = module.main().ok_or(InterpError::NoMain)?;
    let mut m = Machine {
        env: BTreeMap::new(),
        heap: Vec::new(),
    };
    for (a, name) in main.body.args.iter().zip(&main.arg_names) {
        let input = inputs.get(name).ok_or_else(|| InterpError::MissingInput(name.clone()))?;
        let mismatch = || InterpError::InputMismatch {
            name: name.clone(),
            expected: a.ty.clone(),
        };
        let slot = match (&a.ty, input) {
            (HirType::Scalar(k), Data::Scalar(k2, v)) if k == k2 => Slot::Scalar(k.wrap(*v)),
            (HirType::Buffer { elem, len, .. }, Data::Buffer(b)) if *elem == b.elem && *len as usize == b.data.len() => {
                m.heap.push(Some(b.clone()));
                Slot::Buf(m.heap.len() - 1)
            }
            _ => return Err(mismatch()),
        };
        m.env.insert(a.id, slot);
    }
    let returned = match m.block(&main.body, &mut None)? {
        Flow::Return(ids) => ids,
        Flow::Next => Vec::new(),
    };
    let types = main.value_types();
    let mut out = Outcome::default();
    for id in returned {
        let d = m.data(id, &types)?;
        out.returns.push(d);
    }
    for (a, name) in main.body.args.iter().zip(&main.arg_names) {
        if a.ty.is_buffer() {
            let d = m.data(a.id, &types)?;
            out.args.push((name.clone(), d));
        }
    }
    Ok(out)
}

/// Folding state of the innermost loop that carries a result.
struct Fold {
    acc: Option<i64>,
}

fn unsupported(op: &HirOp, message: impl Into<String>) -> InterpError {
    InterpError::Unsupported {
        opcode: op.opcode,
        message: message.into(),
        span: op.span,
    }
}

impl Machine {
    fn scalar(&self, op: &HirOp, id: ValueId) -> Result<i64, InterpError> {
        match self.env.get(&id) {
            Some(Slot::Scalar(v)) => Ok(*v),
            _ => Err(unsupported(op, alloc::format!("{id} is not a defined scalar"))),
        }
    }

    fn handle(&self, op: &HirOp, id: ValueId) -> Result<usize, InterpError> {
        match self.env.get(&id) {
            Some(Slot::Buf(h)) => Ok(*h),
            _ => Err(unsupported(op, alloc::format!("{id} is not a defined buffer"))),
        }
    }

    fn buf(&self, op: &HirOp, id: ValueId) -> Result<&Buffer, InterpError> {
        let h = self.handle(op, id)?;
        self.heap[h].as_ref().ok_or(InterpError::Freed {
            opcode: op.opcode,
            span: op.span,
        })
    }

    fn buf_mut(&mut self, op: &HirOp, id: ValueId) -> Result<&mut Buffer, InterpError> {
        let h = self.handle(op, id)?;
        self.heap[h].as_mut().ok_or(InterpError::Freed {
            opcode: op.opcode,
            span: op.span,
        })
    }

    fn data(&self, id: ValueId, types: &BTreeMap<ValueId, HirType>) -> Result<Data, InterpError> {
        match (self.env.get(&id), types.get(&id)) {
            (Some(Slot::Scalar(v)), Some(HirType::Scalar(k))) => Ok(Data::Scalar(*k, *v)),
            (Some(Slot::Buf(h)), _) => match &self.heap[*h] {
                Some(b) => Ok(Data::Buffer(b.clone())),
                None => Err(InterpError::Freed {
                    opcode: Opcode::Return,
                    span: None,
                }),
            },
            _ => Err(InterpError::Unsupported {
                opcode: Opcode::Return,
                message: alloc::format!("{id} is undefined"),
                span: None,
            }),
        }
    }

    fn index(&self, op: &HirOp, buf: ValueId, idx: ValueId) -> Result<usize, InterpError> {
        let i = self.scalar(op, idx)?;
        let len = self.buf(op, buf)?.data.len();
        if i < 0 || i as usize >= len {
            return Err(InterpError::OutOfBounds {
                opcode: op.opcode,
                index: i,
                len,
                span: op.span,
            });
        }
        Ok(i as usize)
    }

    fn block(&mut self, block: &Block, fold: &mut Option<Fold>) -> Result<Flow, InterpError> {
        for op in &block.ops {
            if let Flow::Return(v) = self.op(op, fold)? {
                return Ok(Flow::Return(v));
            }
        }
        Ok(Flow::Next)
    }

    fn set(&mut self, op: &HirOp, v: i64) {
        if let Some(r) = op.results.first() {
            let k = r.ty.scalar().unwrap_or(ScalarKind::I64);
            self.env.insert(r.id, Slot::Scalar(k.wrap(v)));
        }
    }

    fn op(&mut self, op: &HirOp, fold: &mut Option<Fold>) -> Result<Flow, InterpError> {
        let o = &op.operands;
        match op.opcode {
            Opcode::Const => {
                let v = match op.attrs.get(attr::VALUE) {
                    Some(Attr::Int(v)) => *v,
                    Some(Attr::Float(f)) => f.to_bits() as i64,
                    _ => return Err(unsupported(op, "const without a value")),
                };
                self.set(op, v);
            }
            Opcode::AddI | Opcode::MulI => {
                let (a, b) = (self.scalar(op, o[0])?, self.scalar(op, o[1])?);
                let v = if op.opcode == Opcode::AddI {
                    a.wrapping_add(b)
                } else {
                    a.wrapping_mul(b)
                };
                self.set(op, v);
            }
            Opcode::Load => {
                let i = self.index(op, o[0], o[1])?;
                let v = self.buf(op, o[0])?.data[i];
                self.set(op, v);
            }
            Opcode::Store => {
                let i = self.index(op, o[1], o[2])?;
                let v = self.scalar(op, o[0])?;
                self.buf_mut(op, o[1])?.data[i] = v;
            }
            Opcode::AtomicRmw if o.len() == 3 => {
                let kind = rmw_kind(op)?;
                let i = self.index(op, o[1], o[2])?;
                let v = self.scalar(op, o[0])?;
                let b = self.buf_mut(op, o[1])?;
                b.data[i] = kind.combine(b.elem, b.data[i], v);
            }
            Opcode::AtomicRmw => {
                let kind = rmw_kind(op)?;
                let k = op.results[0].ty.scalar().unwrap_or(ScalarKind::I64);
                let v = kind.combine(k, self.scalar(op, o[0])?, self.scalar(op, o[1])?);
                self.set(op, v);
            }
            Opcode::MemrefAlloc | Opcode::HyperAlloc => {
                let r = &op.results[0];
                let len = r.ty.buffer_len().unwrap_or(0) as usize;
                self.heap.push(Some(Buffer::zeroed(r.ty.elem(), len)));
                self.env.insert(r.id, Slot::Buf(self.heap.len() - 1));
            }
            Opcode::MemrefDealloc | Opcode::HyperDealloc => {
                let h = self.handle(op, o[0])?;
                if self.heap[h].take().is_none() {
                    return Err(InterpError::Freed {
                        opcode: op.opcode,
                        span: op.span,
                    });
                }
            }
            Opcode::MemrefCopy | Opcode::HyperMemcpy => {
                let src = self.buf(op, o[0])?.data.clone();
                let dst = self.buf_mut(op, o[1])?;
                if dst.data.len() != src.len() {
                    return Err(unsupported(op, "copy between buffers of different length"));
                }
                dst.data.copy_from_slice(&src);
            }
            Opcode::HyperFor | Opcode::ParLoop | Opcode::DevLaunch => self.run_loop(op)?,
            Opcode::HyperReduce => {
                let x = self.scalar(op, o[0])?;
                let f = fold.as_mut().ok_or_else(|| unsupported(op, "hyper.reduce outside a loop with a result"))?;
                f.acc = Some(match f.acc {
                    None => x,
                    Some(acc) => self.combine(op, acc, x)?,
                });
            }
            Opcode::HyperReduceReturn => {}
            Opcode::CryptoDigest => {
                let alg = digest_alg(op)?;
                let msg_len = op.attr_int(attr::MSG_LEN).unwrap_or(0) as usize;
                let i = self.scalar(op, o[2])?;
                self.digest_one(op, alg, msg_len, i)?;
            }
            Opcode::CryptoHashBatch => {
                let alg = digest_alg(op)?;
                let msg_len = op.attr_int(attr::MSG_LEN).unwrap_or(0) as usize;
                let count = self.buf(op, o[0])?.data.len() / msg_len.max(1);
                for i in 0..count {
                    self.digest_one(op, alg, msg_len, i as i64)?;
                }
            }
            Opcode::Yield => {}
            Opcode::Return => return Ok(Flow::Return(o.clone())),
        }
        Ok(Flow::Next)
    }

    /// Applies a `hyper.reduce` region to `(acc, x)`.
    fn combine(&mut self, op: &HirOp, acc: i64, x: i64) -> Result<i64, InterpError> {
        let region = &op.regions[0];
        self.env.insert(region.args[0].id, Slot::Scalar(acc));
        self.env.insert(region.args[1].id, Slot::Scalar(x));
        for inner in &region.ops {
            if inner.opcode == Opcode::HyperReduceReturn {
                return self.scalar(inner, inner.operands[0]);
            }
            self.op(inner, &mut None)?;
        }
        Err(unsupported(op, "reduce region without hyper.reduce.return"))
    }

    fn digest_one(&mut self, op: &HirOp, alg: HashAlg, msg_len: usize, i: i64) -> Result<(), InterpError> {
        let (msgs, out) = (op.operands[0], op.operands[1]);
        let dlen = alg.digest_len();
        let m = self.buf(op, msgs)?;
        let count = m.data.len() / msg_len.max(1);
        if i < 0 || i as usize >= count {
            return Err(InterpError::OutOfBounds {
                opcode: op.opcode,
                index: i,
                len: count,
                span: op.span,
            });
        }
        let i = i as usize;
        let msg: Vec<u8> = m.data[i * msg_len..(i + 1) * msg_len].iter().map(|b| *b as u8).collect();
        let mut d = [0u8; 32];
        if op.attr_str(attr::VARIANT) == Some("accel") && alg == HashAlg::Sha1 {
            crypto::sha1_accel_into(&msg, &mut d);
        } else {
            crypto::digest_into(alg, &msg, &mut d);
        }
        let o = self.buf_mut(op, out)?;
        if (i + 1) * dlen > o.data.len() {
            return Err(InterpError::OutOfBounds {
                opcode: op.opcode,
                index: ((i + 1) * dlen - 1) as i64,
                len: o.data.len(),
                span: op.span,
            });
        }
        for (slot, b) in o.data[i * dlen..(i + 1) * dlen].iter_mut().zip(&d[..dlen]) {
            *slot = *b as i8 as i64;
        }
        Ok(())
    }

    fn run_loop(&mut self, op: &HirOp) -> Result<(), InterpError> {
        let (lb, ub) = op.bounds().ok_or_else(|| unsupported(op, "loop without bounds"))?;
        let body = op.body().ok_or_else(|| unsupported(op, "loop without a body"))?;
        let iv = body.args[0].id;
        let mut fold = op.result().map(|_| Fold { acc: None });
        for i in lb..ub {
            self.env.insert(iv, Slot::Scalar(i));
            if let Flow::Return(_) = self.block(body, &mut fold)? {
                return Err(unsupported(op, "return inside a loop body"));
            }
        }
        if let (Some(r), Some(f)) = (op.result(), fold) {
            let v = match f.acc {
                Some(v) => v,
                None => {
                    let reduce = body
                        .ops
                        .iter()
                        .find(|o| o.opcode == Opcode::HyperReduce)
                        .ok_or_else(|| unsupported(op, "loop result without hyper.reduce"))?;
                    reduce_identity(reduce).ok_or_else(|| unsupported(op, "empty loop with an unrecognized reduction"))?
                }
            };
            let k = r.ty.scalar().unwrap_or(ScalarKind::I64);
            self.env.insert(r.id, Slot::Scalar(k.wrap(v)));
        }
        Ok(())
    }
}

fn rmw_kind(op: &HirOp) -> Result<RmwKind, InterpError> {
    op.attr_str(attr::KIND)
        .and_then(RmwKind::from_name)
        .ok_or_else(|| unsupported(op, "unknown atomic_rmw kind"))
}

fn digest_alg(op: &HirOp) -> Result<HashAlg, InterpError> {
    let name = op.attr_str(attr::ALG).unwrap_or_default();
    HashAlg::from_name(name).ok_or_else(|| unsupported(op, alloc::format!("unknown hash algorithm {:?}", name.to_string())))
}

/// Identity of a reduction whose region is a single `atomic_rmw`.
fn reduce_identity(reduce: &HirOp) -> Option<i64> {
    let region = reduce.regions.first()?;
    let rmw = region.ops.iter().find(|o| o.opcode == Opcode::AtomicRmw)?;
    let kind = RmwKind::from_name(rmw.attr_str(attr::KIND)?)?;
    Some(kind.identity(region.args[0].ty.scalar()?))
}
