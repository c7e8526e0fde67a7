//! Fixed-capacity single-producer single-consumer circular buffer.
//!
//! `head` and `tail` are kept as free-running positions; the slot index is the
//! position modulo capacity. One slot always stays empty, so the buffer is
//! full when `head - tail == capacity - 1` and empty when `head == tail`.
//!
//! The producer is the only writer of `head`, the consumer the only writer of
//! `tail`. Both positions can be read at any time through a [`TailProbe`],
//! which is how an untrusted observer watches an enclave ingest records.

use std::cell::UnsafeCell;
use std::fmt;
use std::mem::MaybeUninit;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("ring buffer capacity must be at least 2, got {0}")]
pub struct InvalidCapacity(pub usize);

/// Returned by [`Producer::push`] when no slot is free. The item is handed back.
#[derive(PartialEq, Eq)]
pub struct Full<T>(pub T);

impl<T> fmt::Debug for Full<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Full(..)")
    }
}

#[repr(align(64))]
struct Padded(AtomicUsize);

struct Shared<T> {
    slots: Box<[UnsafeCell<MaybeUninit<T>>]>,
    head: Padded,
    tail: Padded,
}

// Slots are only touched by the unique producer (between its tail check and
// head publish) or the unique consumer (between its head check and tail
// publish); release/acquire on head and tail orders those accesses.
unsafe impl<T: Send> Send for Shared<T> {}
unsafe impl<T: Send> Sync for Shared<T> {}

impl<T> Shared<T> {
    fn capacity(&self) -> usize {
        self.slots.len()
    }

    fn slot(&self, pos: usize) -> *mut MaybeUninit<T> {
        self.slots[pos % self.slots.len()].get()
    }
}

impl<T> Drop for Shared<T> {
    fn drop(&mut self) {
        let head = *self.head.0.get_mut();
        let mut tail = *self.tail.0.get_mut();
        while tail != head {
            unsafe { (*self.slot(tail)).assume_init_drop() };
            tail = tail.wrapping_add(1);
        }
    }
}

pub struct RingBuffer;

impl RingBuffer {
    /// Allocates a buffer with `capacity` slots (usable capacity is one less).
    #[allow(clippy::new_ret_no_self)]
    pub fn new<T>(capacity: usize) -> Result<(Producer<T>, Consumer<T>), InvalidCapacity> {
        if capacity < 2 {
            return Err(InvalidCapacity(capacity));
        }
        let slots = (0..capacity)
            .map(|_| UnsafeCell::new(MaybeUninit::uninit()))
            .collect::<Vec<_>>()
            .into_boxed_slice();
        let shared = Arc::new(Shared {
            slots,
            head: Padded(AtomicUsize::new(0)),
            tail: Padded(AtomicUsize::new(0)),
        });
        Ok((
            Producer { shared: shared.clone(), head: 0, cached_tail: 0 },
            Consumer { shared, tail: 0, cached_head: 0 },
        ))
    }
}

pub struct Producer<T> {
    shared: Arc<Shared<T>>,
    head: usize,
    cached_tail: usize,
}

impl<T> Producer<T> {
    pub fn push(&mut self, item: T) -> Result<(), Full<T>> {
        let cap = self.shared.capacity();
        if self.head.wrapping_sub(self.cached_tail) >= cap - 1 {
            self.cached_tail = self.shared.tail.0.load(Ordering::Acquire);
            if self.head.wrapping_sub(self.cached_tail) >= cap - 1 {
                return Err(Full(item));
            }
        }
        unsafe { (*self.shared.slot(self.head)).write(item) };
        self.head = self.head.wrapping_add(1);
        self.shared.head.0.store(self.head, Ordering::Release);
        Ok(())
    }

    pub fn capacity(&self) -> usize {
        self.shared.capacity()
    }

    pub fn is_full(&self) -> bool {
        let tail = self.shared.tail.0.load(Ordering::Acquire);
        self.head.wrapping_sub(tail) == self.shared.capacity() - 1
    }

}

impl<T: Send + 'static> Producer<T> {
    pub fn probe(&self) -> TailProbe {
        TailProbe { shared: self.shared.clone() }
    }
}

pub struct Consumer<T> {
    shared: Arc<Shared<T>>,
    tail: usize,
    cached_head: usize,
}

impl<T> Consumer<T> {
    pub fn pop(&mut self) -> Option<T> {
        if self.tail == self.cached_head {
            self.cached_head = self.shared.head.0.load(Ordering::Acquire);
            if self.tail == self.cached_head {
                return None;
            }
        }
        let item = unsafe { (*self.shared.slot(self.tail)).assume_init_read() };
        self.tail = self.tail.wrapping_add(1);
        self.shared.tail.0.store(self.tail, Ordering::Release);
        Some(item)
    }

    pub fn is_empty(&self) -> bool {
        self.tail == self.shared.head.0.load(Ordering::Acquire)
    }

    pub fn len(&self) -> usize {
        self.shared.head.0.load(Ordering::Acquire).wrapping_sub(self.tail)
    }

    pub fn capacity(&self) -> usize {
        self.shared.capacity()
    }
}

impl<T: Send + 'static> Consumer<T> {
    pub fn probe(&self) -> TailProbe {
        TailProbe { shared: self.shared.clone() }
    }
}

/// Read-only view of a buffer's pointers. Type-erased so observers do not
/// need to know what the slots hold.
#[derive(Clone)]
pub struct TailProbe {
    shared: Arc<dyn Positions>,
}

trait Positions: Send + Sync {
    fn head(&self) -> usize;
    fn tail(&self) -> usize;
    fn capacity(&self) -> usize;
}

impl<T: Send> Positions for Shared<T> {
    fn head(&self) -> usize {
        self.head.0.load(Ordering::Acquire)
    }
    fn tail(&self) -> usize {
        self.tail.0.load(Ordering::Acquire)
    }
    fn capacity(&self) -> usize {
        Shared::capacity(self)
    }
}

impl TailProbe {
    /// Free-running read position: total number of items ever popped.
    pub fn tail(&self) -> usize {
        self.shared.tail()
    }

    /// Free-running write position: total number of items ever pushed.
    pub fn head(&self) -> usize {
        self.shared.head()
    }

    pub fn tail_index(&self) -> usize {
        self.tail() % self.shared.capacity()
    }

    pub fn head_index(&self) -> usize {
        self.head() % self.shared.capacity()
    }

    pub fn capacity(&self) -> usize {
        self.shared.capacity()
    }
}

impl fmt::Debug for TailProbe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TailProbe")
            .field("head", &self.head())
            .field("tail", &self.tail())
            .field("capacity", &self.capacity())
            .finish()
    }
}
