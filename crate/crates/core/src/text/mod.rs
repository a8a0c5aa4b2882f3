//! Textual form of the IR (`.hir` files).
//!
//! ```text
//! func @main(%a: buf<i64, 10>) {
//!   %0 = hyper.for %i = 0 to 10 devices [{target="cpu:0", ratio=0.5000},
//!       {target="acc:0", ratio=0.5000}] shared=true ins(%a) outs() : i64 {
//!     %1 = load %a[%i] : i64
//!     hyper.reduce %1 (%l: i64, %r: i64) {
//!       %s = atomic_rmw add %l, %r : i64
//!       hyper.reduce.return %s
//!     }
//!     yield
//!   }
//!   return %0
//! }
//! ```

mod lexer;
mod parser;
mod printer;

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

pub use crate::hir::SourceSpan;
pub use printer::{format_ratio, print, print_function};

use crate::hir::{attr, HirModule, Opcode};
use crate::verify::verify;

/// Regions nested deeper than this are rejected.
pub const MAX_NESTING: usize = 64;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParseError {
    pub message: String,
    pub span: SourceSpan,
}

impl ParseError {
    pub(crate) fn new(message: impl fmt::Display, span: SourceSpan) -> Self {
        ParseError {
            message: message.to_string(),
            span,
        }
    }
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.span.line, self.span.column, self.message)
    }
}

/// Attributes written with dedicated op syntax rather than in the
/// generic attribute dictionary.
pub(crate) fn syntax_attrs(op: Opcode) -> &'static [&'static str] {
    match op {
        Opcode::Const => &[attr::VALUE],
        Opcode::AtomicRmw => &[attr::KIND],
        Opcode::HyperAlloc => &[attr::DEVICE],
        Opcode::HyperFor => &[attr::LB, attr::UB, attr::DEVICES, attr::SHARED, attr::NUM_INS],
        Opcode::ParLoop => &[attr::LB, attr::UB, attr::DEVICE, attr::SHARED, attr::NUM_INS],
        Opcode::DevLaunch => &[
            attr::LB,
            attr::UB,
            attr::DEVICE,
            attr::BASE,
            attr::SPACE_LB,
            attr::SPACE_UB,
            attr::SHARED,
            attr::NUM_INS,
        ],
        _ => &[],
    }
}

/// Parses without running the verifier.
pub fn parse_unverified(text: &str) -> Result<HirModule, ParseError> {
    parser::parse_module(text)
}

/// Parses and verifies a module. Verifier diagnostics are reported as
/// parse errors located at the offending op.
pub fn parse(text: &str) -> Result<HirModule, Vec<ParseError>> {
    let module = parse_unverified(text).map_err(|e| alloc::vec![e])?;
    let diags = verify(&module);
    if diags.is_empty() {
        return Ok(module);
    }
    Err(diags
        .into_iter()
        .map(|d| {
            let span = d.span.unwrap_or(SourceSpan {
                start: 0,
                end: 0,
                line: 1,
                column: 1,
            });
            ParseError::new(d, span)
        })
        .collect())
}
