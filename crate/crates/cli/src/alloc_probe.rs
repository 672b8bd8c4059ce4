//! Allocation counting for the constant-space check.
//!
//! [`CountingAlloc`] forwards to the system allocator and, while a
//! [`measure_peak`] call is active on the current thread, tracks live bytes
//! and their high-water mark. Install it as the global allocator to use it.

use std::alloc::{GlobalAlloc, Layout, System};
use std::cell::Cell;

#[derive(Debug, Default, Clone, Copy)]
pub struct CountingAlloc;

thread_local! {
    static ACTIVE: Cell<bool> = const { Cell::new(false) };
    static LIVE: Cell<isize> = const { Cell::new(0) };
    static PEAK: Cell<isize> = const { Cell::new(0) };
    static COUNT: Cell<usize> = const { Cell::new(0) };
}

fn record(delta: isize) {
    // try_with: the thread-local may already be gone during thread teardown.
    let _ = ACTIVE.try_with(|a| {
        if a.get() {
            LIVE.with(|l| {
                let v = l.get() + delta;
                l.set(v);
                PEAK.with(|p| p.set(p.get().max(v)));
            });
            if delta > 0 {
                COUNT.with(|c| c.set(c.get() + 1));
            }
        }
    });
}

unsafe impl GlobalAlloc for CountingAlloc {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = unsafe { System.alloc(layout) };
        if !p.is_null() {
            record(layout.size() as isize);
        }
        p
    }

    unsafe fn alloc_zeroed(&self, layout: Layout) -> *mut u8 {
        let p = unsafe { System.alloc_zeroed(layout) };
        if !p.is_null() {
            record(layout.size() as isize);
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        unsafe { System.dealloc(ptr, layout) };
        record(-(layout.size() as isize));
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let p = unsafe { System.realloc(ptr, layout, new_size) };
        if !p.is_null() {
            record(new_size as isize - layout.size() as isize);
        }
        p
    }
}

/// Heap usage of one call on the current thread.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AllocStats {
    /// Highest number of live bytes allocated inside the call.
    pub peak_bytes: usize,
    pub allocations: usize,
}

/// Runs `f` and reports the heap it used. Reports zeros unless
/// [`CountingAlloc`] is the global allocator.
pub fn measure_peak<R>(f: impl FnOnce() -> R) -> (R, AllocStats) {
    LIVE.with(|l| l.set(0));
    PEAK.with(|p| p.set(0));
    COUNT.with(|c| c.set(0));
    ACTIVE.with(|a| a.set(true));
    let out = f();
    ACTIVE.with(|a| a.set(false));
    let stats = AllocStats {
        peak_bytes: PEAK.with(|p| p.get()).max(0) as usize,
        allocations: COUNT.with(|c| c.get()),
    };
    (out, stats)
}
