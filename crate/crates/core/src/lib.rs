//! Core of the `hetoc` heterogeneous compiler.
//!
//! Everything in this crate is pure computation over in-memory data and
//! builds without `std` (only `alloc` is required):
//!
//! - [`hir`]: the SSA intermediate representation and its builder
//! - [`verify`]: structural verifier producing diagnostics
//! - [`text`]: textual parser and printer for `.hir` files
//! - [`passes`]: pass manager, host memory optimization and lowerings
//! - [`crypto`]: SHA-1, MD5 and SM3 kernels plus the message generator
//! - [`device`]: device descriptions consumed by lowering passes
//! - [`model`]: the CPU/accelerator execution-time model
//! - [`interp`]: sequential reference interpreter
//!
//! The `std` feature enables runtime CPU feature detection for the
//! hardware SHA-1 path.

#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod crypto;
pub mod device;
pub mod hir;
pub mod interp;
pub mod model;
pub mod passes;
pub mod text;
pub mod verify;

pub use device::{DeviceKind, DeviceSpec, DeviceTable};
pub use hir::{
    Attr, Block, DeviceBinding, FunctionBuilder, HirFunction, HirModule, HirOp, HirType, MemSpace,
    Opcode, ScalarKind, Value, ValueId,
};
pub use verify::{verify, Diagnostic, Severity};
