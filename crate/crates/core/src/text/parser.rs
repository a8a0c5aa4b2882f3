use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::lexer::{tokenize, Tok, Token};
use super::{syntax_attrs, ParseError, MAX_NESTING};
use crate::hir::{
    attr, Attr, Block, DeviceBinding, HirFunction, HirModule, HirOp, HirType, MemSpace, Opcode,
    ScalarKind, SourceSpan, Value, ValueId,
};

type PResult<T> = Result<T, ParseError>;

pub(super) fn parse_module(src: &str) -> PResult<HirModule> {
    let toks = tokenize(src)?;
    let mut p = Parser {
        toks,
        pos: 0,
        scopes: Vec::new(),
        next_id: 0,
        depth: 0,
    };
    let mut functions = Vec::new();
    while p.peek() != &Tok::Eof {
        functions.push(p.function()?);
    }
    Ok(HirModule::new(functions))
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    scopes: Vec<BTreeMap<String, Value>>,
    next_id: u32,
    depth: usize,
}

fn produces_result(op: Opcode) -> Option<bool> {
    match op {
        Opcode::Const
        | Opcode::AddI
        | Opcode::MulI
        | Opcode::Load
        | Opcode::MemrefAlloc
        | Opcode::HyperAlloc => Some(true),
        // Depends on the form (atomic_rmw) or on a trailing type (loops).
        Opcode::AtomicRmw | Opcode::HyperFor | Opcode::ParLoop | Opcode::DevLaunch => None,
        _ => Some(false),
    }
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, n: usize) -> &Tok {
        let i = (self.pos + n).min(self.toks.len() - 1);
        &self.toks[i].tok
    }

    fn span(&self) -> SourceSpan {
        self.toks[self.pos].span
    }

    fn advance(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err<T>(&self, msg: impl core::fmt::Display) -> PResult<T> {
        Err(ParseError::new(msg, self.span()))
    }

    fn unexpected<T>(&self, wanted: &str) -> PResult<T> {
        self.err(format!("expected {wanted}, found {}", self.peek().describe()))
    }

    fn eat_punct(&mut self, c: char) -> bool {
        if self.peek() == &Tok::Punct(c) {
            self.advance();
            true
        } else {
            false
        }
    }

    fn punct(&mut self, c: char) -> PResult<()> {
        if self.eat_punct(c) {
            Ok(())
        } else {
            self.unexpected(&format!("`{c}`"))
        }
    }

    fn keyword(&mut self, kw: &str) -> PResult<()> {
        match self.peek() {
            Tok::Ident(s) if s == kw => {
                self.advance();
                Ok(())
            }
            _ => self.unexpected(&format!("`{kw}`")),
        }
    }

    fn ident(&mut self) -> PResult<String> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.advance();
                Ok(s)
            }
            _ => self.unexpected("an identifier"),
        }
    }

    fn int(&mut self) -> PResult<i64> {
        match *self.peek() {
            Tok::Int(v) => {
                self.advance();
                Ok(v)
            }
            _ => self.unexpected("an integer"),
        }
    }

    fn string(&mut self) -> PResult<String> {
        match self.peek().clone() {
            Tok::Str(s) => {
                self.advance();
                Ok(s)
            }
            _ => self.unexpected("a string"),
        }
    }

    fn boolean(&mut self) -> PResult<bool> {
        match self.peek() {
            Tok::Ident(s) if s == "true" => {
                self.advance();
                Ok(true)
            }
            Tok::Ident(s) if s == "false" => {
                self.advance();
                Ok(false)
            }
            _ => self.unexpected("`true` or `false`"),
        }
    }

    fn value_name(&mut self) -> PResult<String> {
        match self.peek().clone() {
            Tok::Value(s) => {
                self.advance();
                Ok(s)
            }
            _ => self.unexpected("a value"),
        }
    }

    // -- names -----------------------------------------------------------

    fn define(&mut self, name: &str, ty: HirType, span: SourceSpan) -> PResult<Value> {
        if self.scopes.iter().any(|s| s.contains_key(name)) {
            return Err(ParseError::new(format!("value %{name} is already defined"), span));
        }
        let v = Value {
            id: ValueId(self.next_id),
            ty,
        };
        self.next_id += 1;
        self.scopes
            .last_mut()
            .expect("scope")
            .insert(name.to_string(), v.clone());
        Ok(v)
    }

    fn use_value(&mut self) -> PResult<Value> {
        let span = self.span();
        let name = self.value_name()?;
        self.scopes
            .iter()
            .rev()
            .find_map(|s| s.get(&name))
            .cloned()
            .ok_or_else(|| ParseError::new(format!("use of undefined value %{name}"), span))
    }

    fn value_list(&mut self) -> PResult<Vec<Value>> {
        self.punct('(')?;
        let mut out = Vec::new();
        if !self.eat_punct(')') {
            loop {
                out.push(self.use_value()?);
                if self.eat_punct(')') {
                    break;
                }
                self.punct(',')?;
            }
        }
        Ok(out)
    }

    // -- types and attributes --------------------------------------------

    fn scalar(&mut self) -> PResult<ScalarKind> {
        let span = self.span();
        let name = self.ident()?;
        ScalarKind::from_name(&name)
            .ok_or_else(|| ParseError::new(format!("unknown scalar type `{name}`"), span))
    }

    fn ty(&mut self, default_space: Option<&str>) -> PResult<HirType> {
        if !matches!(self.peek(), Tok::Ident(s) if s == "buf") {
            return self.scalar().map(HirType::Scalar);
        }
        self.advance();
        self.punct('<')?;
        let elem = self.scalar()?;
        self.punct(',')?;
        let len = self.int()?;
        if len < 0 {
            return self.err(format!("buffer length {len} is negative"));
        }
        let space = if self.eat_punct(',') {
            let span = self.span();
            let s = self.string()?;
            MemSpace::new(s).map_err(|e| ParseError::new(e, span))?
        } else {
            match default_space {
                Some(d) => MemSpace::new(d).map_err(|e| ParseError::new(e, self.span()))?,
                None => MemSpace::host(),
            }
        };
        self.punct('>')?;
        Ok(HirType::Buffer {
            elem,
            len: len as u64,
            space,
        })
    }

    fn number(&mut self) -> PResult<Attr> {
        let t = self.peek().clone();
        let v = match t {
            Tok::Int(v) => Attr::Int(v),
            Tok::Float(v) => Attr::Float(v),
            Tok::Ident(ref s) if s == "nan" => Attr::Float(f64::NAN),
            Tok::Ident(ref s) if s == "inf" => Attr::Float(f64::INFINITY),
            _ => return self.unexpected("a number"),
        };
        self.advance();
        Ok(v)
    }

    fn attr_value(&mut self) -> PResult<Attr> {
        match self.peek() {
            Tok::Str(_) => self.string().map(Attr::Str),
            Tok::Ident(s) if s == "true" || s == "false" => self.boolean().map(Attr::Bool),
            Tok::Punct('{') => self.int_map().map(Attr::IntMap),
            Tok::Punct('[') => self.bindings().map(Attr::Bindings),
            _ => self.number(),
        }
    }

    fn int_map(&mut self) -> PResult<BTreeMap<String, i64>> {
        self.punct('{')?;
        let mut map = BTreeMap::new();
        if self.eat_punct('}') {
            return Ok(map);
        }
        loop {
            let span = self.span();
            let key = self.ident()?;
            self.punct('=')?;
            let v = self.int()?;
            if map.insert(key.clone(), v).is_some() {
                return Err(ParseError::new(format!("duplicate key `{key}`"), span));
            }
            if self.eat_punct('}') {
                return Ok(map);
            }
            self.punct(',')?;
        }
    }

    fn bindings(&mut self) -> PResult<Vec<DeviceBinding>> {
        self.punct('[')?;
        let mut out = Vec::new();
        if self.eat_punct(']') {
            return Ok(out);
        }
        loop {
            out.push(self.binding()?);
            if self.eat_punct(']') {
                return Ok(out);
            }
            self.punct(',')?;
        }
    }

    fn binding(&mut self) -> PResult<DeviceBinding> {
        let open = self.span();
        self.punct('{')?;
        let (mut target, mut ratio, mut config) = (None, None, None);
        loop {
            let span = self.span();
            let key = self.ident()?;
            self.punct('=')?;
            let dup = match key.as_str() {
                "target" => target.replace(self.string()?).is_some(),
                "ratio" => {
                    let r = match self.number()? {
                        Attr::Int(v) => v as f64,
                        Attr::Float(v) => v,
                        _ => unreachable!(),
                    };
                    ratio.replace(r).is_some()
                }
                "config" => config.replace(self.int_map()?).is_some(),
                other => {
                    return Err(ParseError::new(format!("unknown device binding key `{other}`"), span))
                }
            };
            if dup {
                return Err(ParseError::new(format!("duplicate key `{key}`"), span));
            }
            if self.eat_punct('}') {
                break;
            }
            self.punct(',')?;
        }
        match (target, ratio) {
            (Some(target_id), Some(duty_ratio)) => Ok(DeviceBinding {
                target_id,
                duty_ratio,
                target_config: config.unwrap_or_default(),
            }),
            _ => Err(ParseError::new("device binding needs `target` and `ratio`", open)),
        }
    }

    fn attr_dict(&mut self, op: &mut HirOp) -> PResult<()> {
        self.punct('{')?;
        if self.eat_punct('}') {
            return Ok(());
        }
        let reserved = syntax_attrs(op.opcode);
        loop {
            let span = self.span();
            let key = self.ident()?;
            if reserved.contains(&key.as_str()) {
                return Err(ParseError::new(
                    format!("attribute `{key}` of {} is written with op syntax", op.opcode),
                    span,
                ));
            }
            self.punct('=')?;
            let v = self.attr_value()?;
            if op.attrs.insert(key.clone(), v).is_some() {
                return Err(ParseError::new(format!("duplicate attribute `{key}`"), span));
            }
            if self.eat_punct('}') {
                return Ok(());
            }
            self.punct(',')?;
        }
    }

    // -- structure -------------------------------------------------------

    fn function(&mut self) -> PResult<HirFunction> {
        self.keyword("func")?;
        let name = match self.peek().clone() {
            Tok::Symbol(s) => {
                self.advance();
                s
            }
            _ => return self.unexpected("a function name like `@main`"),
        };
        self.scopes.clear();
        self.scopes.push(BTreeMap::new());
        self.next_id = 0;
        self.punct('(')?;
        let mut arg_names = Vec::new();
        let mut args = Vec::new();
        if !self.eat_punct(')') {
            loop {
                let span = self.span();
                let n = self.value_name()?;
                if !n.starts_with(|c: char| c.is_ascii_alphabetic()) {
                    return Err(ParseError::new(
                        format!("parameter name %{n} must start with a letter"),
                        span,
                    ));
                }
                self.punct(':')?;
                let ty = self.ty(None)?;
                args.push(self.define(&n, ty, span)?);
                arg_names.push(n);
                if self.eat_punct(')') {
                    break;
                }
                self.punct(',')?;
            }
        }
        let body = self.region(args)?;
        let mut f = HirFunction {
            name,
            arg_names,
            body,
        };
        f.renumber();
        Ok(f)
    }

    /// Parses `{ op* }`. The caller has already defined `args` in the
    /// current scope; they become the block arguments.
    fn region(&mut self, args: Vec<Value>) -> PResult<Block> {
        let open = self.span();
        self.punct('{')?;
        self.depth += 1;
        if self.depth > MAX_NESTING {
            return Err(ParseError::new(
                format!("regions nested deeper than {MAX_NESTING} levels"),
                open,
            ));
        }
        let mut ops = Vec::new();
        loop {
            match self.peek() {
                Tok::Punct('}') => {
                    self.advance();
                    break;
                }
                Tok::Eof => return Err(ParseError::new("unterminated region", open)),
                _ => ops.push(self.op()?),
            }
        }
        self.depth -= 1;
        Ok(Block { args, ops })
    }

    /// Opens a scope, defines the region arguments, parses the region.
    fn scoped_region(&mut self, args: &[(String, HirType, SourceSpan)]) -> PResult<Block> {
        self.scopes.push(BTreeMap::new());
        let mut values = Vec::new();
        for (name, ty, span) in args {
            values.push(self.define(name, ty.clone(), *span)?);
        }
        let block = self.region(values)?;
        self.scopes.pop();
        Ok(block)
    }

    fn op(&mut self) -> PResult<HirOp> {
        let start = self.span();
        let result_name = if matches!(self.peek(), Tok::Value(_)) && self.peek_at(1) == &Tok::Punct('=') {
            let n = self.value_name()?;
            self.advance();
            Some(n)
        } else {
            None
        };
        let name_span = self.span();
        let name = self.ident()?;
        let opcode = Opcode::from_name(&name)
            .ok_or_else(|| ParseError::new(format!("unknown opcode `{name}`"), name_span))?;
        let mut op = HirOp::new(opcode);
        let result_ty = self.op_body(&mut op)?;
        let end = self.toks[self.pos.saturating_sub(1)].span.end;
        op.span = Some(SourceSpan {
            start: start.start,
            end: end.max(start.start),
            line: start.line,
            column: start.column,
        });
        match (result_name, result_ty, produces_result(opcode)) {
            (Some(n), Some(ty), _) => {
                let v = self.define(&n, ty, start)?;
                op.results.push(v);
            }
            (None, None, _) => {}
            (Some(n), None, _) => {
                return Err(ParseError::new(format!("{opcode} produces no result to bind to %{n}"), start))
            }
            (None, Some(_), Some(true)) => {
                return Err(ParseError::new(format!("result of {opcode} must be bound to a name"), start))
            }
            (None, Some(_), _) => {
                return Err(ParseError::new(
                    format!("{opcode} declares a result type but binds no name"),
                    start,
                ))
            }
        }
        Ok(op)
    }

    fn colon_type(&mut self) -> PResult<HirType> {
        self.punct(':')?;
        self.ty(None)
    }

    fn trailing_dict(&mut self, op: &mut HirOp) -> PResult<()> {
        if self.peek() == &Tok::Punct('{') {
            self.attr_dict(op)?;
        }
        Ok(())
    }

    /// Parses everything after the opcode; returns the result type, if any.
    fn op_body(&mut self, op: &mut HirOp) -> PResult<Option<HirType>> {
        match op.opcode {
            Opcode::Const => {
                let v = self.number()?;
                op.attrs.insert(attr::VALUE.to_string(), v);
                self.trailing_dict(op)?;
                self.colon_type().map(Some)
            }
            Opcode::AddI | Opcode::MulI => {
                let a = self.use_value()?;
                self.punct(',')?;
                let b = self.use_value()?;
                op.operands = alloc::vec![a.id, b.id];
                self.trailing_dict(op)?;
                self.colon_type().map(Some)
            }
            Opcode::Load => {
                let (buf, idx) = self.indexed()?;
                op.operands = alloc::vec![buf.id, idx.id];
                self.trailing_dict(op)?;
                self.colon_type().map(Some)
            }
            Opcode::Store => {
                let v = self.use_value()?;
                self.punct(',')?;
                let (buf, idx) = self.indexed()?;
                op.operands = alloc::vec![v.id, buf.id, idx.id];
                self.trailing_dict(op)?;
                Ok(None)
            }
            Opcode::AtomicRmw => {
                let kind = self.ident()?;
                op.attrs.insert(attr::KIND.to_string(), Attr::Str(kind));
                let a = self.use_value()?;
                self.punct(',')?;
                if matches!(self.peek(), Tok::Value(_)) && self.peek_at(1) == &Tok::Punct('[') {
                    let (buf, idx) = self.indexed()?;
                    op.operands = alloc::vec![a.id, buf.id, idx.id];
                    self.trailing_dict(op)?;
                    Ok(None)
                } else {
                    let b = self.use_value()?;
                    op.operands = alloc::vec![a.id, b.id];
                    self.trailing_dict(op)?;
                    self.colon_type().map(Some)
                }
            }
            Opcode::MemrefAlloc => {
                self.trailing_dict(op)?;
                self.colon_type().map(Some)
            }
            Opcode::HyperAlloc => {
                self.keyword("dev")?;
                self.punct('(')?;
                let device = self.string()?;
                self.punct(')')?;
                op.attrs
                    .insert(attr::DEVICE.to_string(), Attr::Str(device.clone()));
                self.trailing_dict(op)?;
                self.punct(':')?;
                self.ty(Some(&device)).map(Some)
            }
            Opcode::MemrefDealloc
            | Opcode::HyperDealloc
            | Opcode::HyperReduceReturn => {
                let v = self.use_value()?;
                op.operands = alloc::vec![v.id];
                self.trailing_dict(op)?;
                Ok(None)
            }
            Opcode::MemrefCopy | Opcode::HyperMemcpy => {
                let a = self.use_value()?;
                self.punct(',')?;
                let b = self.use_value()?;
                op.operands = alloc::vec![a.id, b.id];
                self.trailing_dict(op)?;
                Ok(None)
            }
            Opcode::CryptoDigest | Opcode::CryptoHashBatch => {
                loop {
                    op.operands.push(self.use_value()?.id);
                    if !self.eat_punct(',') {
                        break;
                    }
                }
                self.trailing_dict(op)?;
                Ok(None)
            }
            Opcode::Yield => {
                self.trailing_dict(op)?;
                Ok(None)
            }
            Opcode::Return => {
                if matches!(self.peek(), Tok::Value(_)) && self.peek_at(1) != &Tok::Punct('=') {
                    loop {
                        op.operands.push(self.use_value()?.id);
                        if !self.eat_punct(',') {
                            break;
                        }
                    }
                }
                self.trailing_dict(op)?;
                Ok(None)
            }
            Opcode::HyperReduce => {
                let v = self.use_value()?;
                op.operands = alloc::vec![v.id];
                self.punct('(')?;
                let mut args = Vec::new();
                loop {
                    let span = self.span();
                    let n = self.value_name()?;
                    self.punct(':')?;
                    let ty = self.ty(None)?;
                    args.push((n, ty, span));
                    if self.eat_punct(')') {
                        break;
                    }
                    self.punct(',')?;
                }
                self.attributes_kw(op)?;
                let block = self.scoped_region(&args)?;
                op.regions.push(block);
                Ok(None)
            }
            Opcode::HyperFor | Opcode::ParLoop | Opcode::DevLaunch => self.loop_op(op),
        }
    }

    fn attributes_kw(&mut self, op: &mut HirOp) -> PResult<()> {
        if matches!(self.peek(), Tok::Ident(s) if s == "attributes") {
            self.advance();
            self.attr_dict(op)?;
        }
        Ok(())
    }

    fn indexed(&mut self) -> PResult<(Value, Value)> {
        let buf = self.use_value()?;
        self.punct('[')?;
        let idx = self.use_value()?;
        self.punct(']')?;
        Ok((buf, idx))
    }

    fn loop_op(&mut self, op: &mut HirOp) -> PResult<Option<HirType>> {
        let iv_span = self.span();
        let iv = self.value_name()?;
        self.punct('=')?;
        let lb = self.int()?;
        self.keyword("to")?;
        let ub = self.int()?;
        op.attrs.insert(attr::LB.to_string(), Attr::Int(lb));
        op.attrs.insert(attr::UB.to_string(), Attr::Int(ub));
        if op.opcode == Opcode::HyperFor {
            self.keyword("devices")?;
            let b = self.bindings()?;
            op.attrs.insert(attr::DEVICES.to_string(), Attr::Bindings(b));
        } else {
            self.keyword("device")?;
            self.punct('(')?;
            let d = self.string()?;
            self.punct(')')?;
            op.attrs.insert(attr::DEVICE.to_string(), Attr::Str(d));
        }
        if op.opcode == Opcode::DevLaunch {
            self.keyword("base")?;
            self.punct('=')?;
            let base = self.int()?;
            self.keyword("space")?;
            self.punct('=')?;
            let slb = self.int()?;
            self.punct(':')?;
            let sub = self.int()?;
            op.attrs.insert(attr::BASE.to_string(), Attr::Int(base));
            op.attrs.insert(attr::SPACE_LB.to_string(), Attr::Int(slb));
            op.attrs.insert(attr::SPACE_UB.to_string(), Attr::Int(sub));
        }
        self.keyword("shared")?;
        self.punct('=')?;
        let shared = self.boolean()?;
        op.attrs.insert(attr::SHARED.to_string(), Attr::Bool(shared));
        self.keyword("ins")?;
        let ins = self.value_list()?;
        self.keyword("outs")?;
        let outs = self.value_list()?;
        op.attrs
            .insert(attr::NUM_INS.to_string(), Attr::Int(ins.len() as i64));
        op.operands = ins.iter().chain(&outs).map(|v| v.id).collect();
        self.attributes_kw(op)?;
        let result = if self.eat_punct(':') {
            Some(self.ty(None)?)
        } else {
            None
        };
        let block = self.scoped_region(&[(iv, HirType::index(), iv_span)])?;
        op.regions.push(block);
        Ok(result)
    }
}
