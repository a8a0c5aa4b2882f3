use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use super::syntax_attrs;
use crate::hir::{attr, Attr, Block, DeviceBinding, HirFunction, HirModule, HirOp, HirType, Opcode, ValueId};

/// Duty ratios print with four decimals when that is exact, otherwise with
/// the shortest representation that round-trips.
pub fn format_ratio(r: f64) -> String {
    let fixed = format!("{r:.4}");
    if fixed.parse::<f64>() == Ok(r) {
        fixed
    } else {
        format_float(r)
    }
}

fn format_float(v: f64) -> String {
    if v.is_nan() {
        String::from("nan")
    } else if v.is_infinite() {
        String::from(if v > 0.0 { "inf" } else { "-inf" })
    } else {
        format!("{v:?}")
    }
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn format_type(ty: &HirType, implied_space: Option<&str>) -> String {
    match ty {
        HirType::Scalar(k) => format!("{k}"),
        HirType::Buffer { elem, len, space } => {
            if space.is_host() || Some(space.as_str()) == implied_space {
                format!("buf<{elem}, {len}>")
            } else {
                format!("buf<{elem}, {len}, {}>", quote(space.as_str()))
            }
        }
    }
}

fn format_int_map(m: &BTreeMap<String, i64>) -> String {
    let items: Vec<String> = m.iter().map(|(k, v)| format!("{k}={v}")).collect();
    format!("{{{}}}", items.join(", "))
}

fn format_bindings(bs: &[DeviceBinding]) -> String {
    let items: Vec<String> = bs
        .iter()
        .map(|b| {
            let mut s = format!("{{target={}, ratio={}", quote(&b.target_id), format_ratio(b.duty_ratio));
            if !b.target_config.is_empty() {
                let _ = write!(s, ", config={}", format_int_map(&b.target_config));
            }
            s.push('}');
            s
        })
        .collect();
    format!("[{}]", items.join(", "))
}

fn format_attr(a: &Attr) -> String {
    match a {
        Attr::Int(v) => format!("{v}"),
        Attr::Float(v) => format_float(*v),
        Attr::Bool(b) => format!("{b}"),
        Attr::Str(s) => quote(s),
        Attr::IntMap(m) => format_int_map(m),
        Attr::Bindings(b) => format_bindings(b),
    }
}

struct Printer<'f> {
    out: String,
    names: BTreeMap<ValueId, &'f str>,
}

impl<'f> Printer<'f> {
    fn name(&self, id: ValueId) -> String {
        match self.names.get(&id) {
            Some(n) => format!("%{n}"),
            None => format!("%{}", id.0),
        }
    }

    fn names(&self, ids: &[ValueId]) -> String {
        let v: Vec<String> = ids.iter().map(|&i| self.name(i)).collect();
        v.join(", ")
    }

    fn indent(&mut self, depth: usize) {
        for _ in 0..depth {
            self.out.push_str("  ");
        }
    }

    fn extra_attrs(op: &HirOp) -> Option<String> {
        let reserved = syntax_attrs(op.opcode);
        let items: Vec<String> = op
            .attrs
            .iter()
            .filter(|(k, _)| !reserved.contains(&k.as_str()))
            .map(|(k, v)| format!("{k}={}", format_attr(v)))
            .collect();
        (!items.is_empty()).then(|| format!("{{{}}}", items.join(", ")))
    }

    fn block_body(&mut self, block: &Block, depth: usize) {
        self.out.push_str("{\n");
        for op in &block.ops {
            self.op(op, depth + 1);
        }
        self.indent(depth);
        self.out.push('}');
    }

    fn op(&mut self, op: &HirOp, depth: usize) {
        self.indent(depth);
        if let Some(r) = op.results.first() {
            let _ = write!(self.out, "{} = ", self.name(r.id));
        }
        self.out.push_str(op.opcode.name());
        let result_ty = op.results.first().map(|r| format_type(&r.ty, None));
        let dict = Self::extra_attrs(op);
        let ops = &op.operands;
        let mut s = String::new();
        match op.opcode {
            Opcode::Const => {
                let v = op.attrs.get(attr::VALUE).map(format_attr).unwrap_or_default();
                let _ = write!(s, " {v}");
            }
            Opcode::AtomicRmw => {
                let kind = op.attr_str(attr::KIND).unwrap_or("?");
                if ops.len() == 3 {
                    let _ = write!(s, " {kind} {}, {}[{}]", self.name(ops[0]), self.name(ops[1]), self.name(ops[2]));
                } else {
                    let _ = write!(s, " {kind} {}", self.names(ops));
                }
            }
            Opcode::Load if ops.len() == 2 => {
                let _ = write!(s, " {}[{}]", self.name(ops[0]), self.name(ops[1]));
            }
            Opcode::Store if ops.len() == 3 => {
                let _ = write!(s, " {}, {}[{}]", self.name(ops[0]), self.name(ops[1]), self.name(ops[2]));
            }
            Opcode::HyperAlloc => {
                let device = op.attr_str(attr::DEVICE).unwrap_or("");
                let _ = write!(s, " dev({})", quote(device));
                if let Some(d) = dict {
                    let _ = write!(s, " {d}");
                }
                let ty = op.results.first().map(|r| format_type(&r.ty, Some(device)));
                let _ = write!(s, " : {}", ty.unwrap_or_default());
                self.out.push_str(&s);
                self.out.push('\n');
                return;
            }
            Opcode::HyperReduce => {
                let args: Vec<String> = op
                    .regions
                    .first()
                    .map(|b| {
                        b.args
                            .iter()
                            .map(|a| format!("{}: {}", self.name(a.id), format_type(&a.ty, None)))
                            .collect()
                    })
                    .unwrap_or_default();
                let _ = write!(s, " {} ({})", self.names(ops), args.join(", "));
                if let Some(d) = dict {
                    let _ = write!(s, " attributes {d}");
                }
                self.out.push_str(&s);
                self.out.push(' ');
                if let Some(b) = op.regions.first() {
                    self.block_body(b, depth);
                }
                self.out.push('\n');
                return;
            }
            Opcode::HyperFor | Opcode::ParLoop | Opcode::DevLaunch => {
                let iv = op
                    .regions
                    .first()
                    .and_then(|b| b.args.first())
                    .map(|a| self.name(a.id))
                    .unwrap_or_default();
                let (lb, ub) = op.bounds().unwrap_or_default();
                let _ = write!(s, " {iv} = {lb} to {ub}");
                if op.opcode == Opcode::HyperFor {
                    let _ = write!(s, " devices {}", format_bindings(op.bindings().unwrap_or_default()));
                } else {
                    let _ = write!(s, " device({})", quote(op.attr_str(attr::DEVICE).unwrap_or("")));
                }
                if op.opcode == Opcode::DevLaunch {
                    let get = |k| op.attr_int(k).unwrap_or_default();
                    let _ = write!(
                        s,
                        " base={} space={}:{}",
                        get(attr::BASE),
                        get(attr::SPACE_LB),
                        get(attr::SPACE_UB)
                    );
                }
                let shared = op.attr_bool(attr::SHARED).unwrap_or(true);
                let _ = write!(s, " shared={shared} ins({}) outs({})", self.names(op.ins()), self.names(op.outs()));
                if let Some(d) = dict {
                    let _ = write!(s, " attributes {d}");
                }
                if let Some(t) = result_ty {
                    let _ = write!(s, " : {t}");
                }
                self.out.push_str(&s);
                self.out.push(' ');
                if let Some(b) = op.regions.first() {
                    self.block_body(b, depth);
                }
                self.out.push('\n');
                return;
            }
            _ => {
                if !ops.is_empty() {
                    let _ = write!(s, " {}", self.names(ops));
                }
            }
        }
        if let Some(d) = dict {
            let _ = write!(s, " {d}");
        }
        if let Some(t) = result_ty {
            let _ = write!(s, " : {t}");
        }
        self.out.push_str(&s);
        self.out.push('\n');
    }
}

/// Prints one function in canonical value numbering.
pub fn print_function(func: &HirFunction) -> String {
    let mut func = func.clone();
    func.renumber();
    let mut p = Printer {
        out: String::new(),
        names: func
            .body
            .args
            .iter()
            .zip(&func.arg_names)
            .map(|(a, n)| (a.id, n.as_str()))
            .collect(),
    };
    let params: Vec<String> = func
        .body
        .args
        .iter()
        .map(|a| format!("{}: {}", p.name(a.id), format_type(&a.ty, None)))
        .collect();
    let _ = write!(p.out, "func @{}({}) ", func.name, params.join(", "));
    p.block_body(&func.body, 0);
    p.out.push('\n');
    p.out
}

/// Prints a module. Output is deterministic: values are renumbered
/// canonically and attribute keys are sorted.
pub fn print(module: &HirModule) -> String {
    let funcs: Vec<String> = module.functions.iter().map(print_function).collect();
    funcs.join("\n")
}
