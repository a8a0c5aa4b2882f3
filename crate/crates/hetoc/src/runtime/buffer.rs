//! Buffers shared between worker threads.
//!
//! Every element is an atomic so that loop bodies running on several
//! threads can store to disjoint slots and combine into accumulators
//! without locks. Relaxed ordering suffices: the pool join that ends a
//! loop publishes all writes.

use std::sync::atomic::{AtomicBool, AtomicI64, AtomicU8, Ordering::Relaxed};
use std::sync::Arc;

use hetoc_core::hir::{RmwKind, ScalarKind};
use hetoc_core::interp::Buffer;

enum Cells {
    Bytes(Box<[AtomicU8]>),
    Words(Box<[AtomicI64]>),
}

pub struct RtBuffer {
    elem: ScalarKind,
    cells: Cells,
    /// Index of the arena that owns the bytes.
    pub(crate) device: usize,
    pub(crate) freed: AtomicBool,
}

impl RtBuffer {
    pub fn zeroed(elem: ScalarKind, len: usize, device: usize) -> Self {
        let cells = if elem == ScalarKind::I8 {
            Cells::Bytes((0..len).map(|_| AtomicU8::new(0)).collect())
        } else {
            Cells::Words((0..len).map(|_| AtomicI64::new(0)).collect())
        };
        RtBuffer {
            elem,
            cells,
            device,
            freed: AtomicBool::new(false),
        }
    }

    pub fn from_buffer(b: &Buffer, device: usize) -> Self {
        let rt = Self::zeroed(b.elem, b.data.len(), device);
        for (i, v) in b.data.iter().enumerate() {
            rt.store(i, *v);
        }
        rt
    }

    pub fn elem(&self) -> ScalarKind {
        self.elem
    }

    pub fn len(&self) -> usize {
        match &self.cells {
            Cells::Bytes(c) => c.len(),
            Cells::Words(c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn byte_size(&self) -> u64 {
        (self.len() * self.elem.byte_width()) as u64
    }

    #[inline]
    pub fn load(&self, i: usize) -> i64 {
        match &self.cells {
            Cells::Bytes(c) => c[i].load(Relaxed) as i8 as i64,
            Cells::Words(c) => self.elem.wrap(c[i].load(Relaxed)),
        }
    }

    #[inline]
    pub fn store(&self, i: usize, v: i64) {
        match &self.cells {
            Cells::Bytes(c) => c[i].store(v as u8, Relaxed),
            Cells::Words(c) => c[i].store(v, Relaxed),
        }
    }

    #[inline]
    pub fn rmw(&self, kind: RmwKind, i: usize, v: i64) {
        let elem = self.elem;
        match &self.cells {
            Cells::Bytes(c) => {
                let _ = c[i].fetch_update(Relaxed, Relaxed, |cur| Some(kind.combine(elem, cur as i8 as i64, v) as u8));
            }
            Cells::Words(c) if kind == RmwKind::Add && elem != ScalarKind::I32 => {
                c[i].fetch_add(v, Relaxed);
            }
            Cells::Words(c) => {
                let _ = c[i].fetch_update(Relaxed, Relaxed, |cur| Some(kind.combine(elem, elem.wrap(cur), v)));
            }
        }
    }

    /// Reads `out.len()` bytes of an `i8` buffer starting at `start`.
    #[inline]
    pub fn read_bytes(&self, start: usize, out: &mut [u8]) {
        let n = out.len();
        match &self.cells {
            Cells::Bytes(c) => {
                for (o, cell) in out.iter_mut().zip(&c[start..start + n]) {
                    *o = cell.load(Relaxed);
                }
            }
            Cells::Words(_) => {
                for (k, o) in out.iter_mut().enumerate() {
                    *o = self.load(start + k) as u8;
                }
            }
        }
    }

    #[inline]
    pub fn write_bytes(&self, start: usize, bytes: &[u8]) {
        for (k, b) in bytes.iter().enumerate() {
            self.store(start + k, *b as i8 as i64);
        }
    }

    /// Copies `n` elements from `src[src_at..]` to `self[dst_at..]`.
    pub fn copy_from(&self, dst_at: usize, src: &RtBuffer, src_at: usize, n: usize) {
        for k in 0..n {
            self.store(dst_at + k, src.load(src_at + k));
        }
    }

    pub fn snapshot(&self) -> Buffer {
        Buffer {
            elem: self.elem,
            data: (0..self.len()).map(|i| self.load(i)).collect(),
        }
    }
}

/// A buffer as seen from a loop body. Staged partitions hold global
/// elements `[lo, lo + buf.len())`; `global_len` is the length of the
/// buffer being viewed, used in error messages.
#[derive(Clone)]
pub struct View {
    pub buf: Arc<RtBuffer>,
    pub lo: i64,
    pub global_len: usize,
}

impl View {
    pub fn whole(buf: Arc<RtBuffer>) -> Self {
        let global_len = buf.len();
        View { buf, lo: 0, global_len }
    }

    /// Position of global index `j` in the underlying buffer.
    #[inline]
    pub fn pos(&self, j: i64) -> Option<usize> {
        let p = j.checked_sub(self.lo)?;
        (p >= 0 && (p as usize) < self.buf.len()).then_some(p as usize)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn narrow_elements_wrap() {
        let b = RtBuffer::zeroed(ScalarKind::I32, 2, 0);
        b.store(0, i32::MAX as i64);
        b.rmw(RmwKind::Add, 0, 1);
        assert_eq!(b.load(0), i32::MIN as i64);
        let c = RtBuffer::zeroed(ScalarKind::I8, 1, 0);
        c.store(0, -3);
        c.rmw(RmwKind::Max, 0, -5);
        assert_eq!(c.load(0), -3);
        c.rmw(RmwKind::Min, 0, -100);
        assert_eq!(c.load(0), -100);
    }

    #[test]
    fn staged_view_maps_global_indices() {
        let v = View {
            buf: Arc::new(RtBuffer::zeroed(ScalarKind::I64, 4, 1)),
            lo: 10,
            global_len: 100,
        };
        assert_eq!(v.pos(10), Some(0));
        assert_eq!(v.pos(13), Some(3));
        assert_eq!(v.pos(14), None);
        assert_eq!(v.pos(9), None);
    }
}
