//! Allocator tuning for transform-heavy workloads.
//!
//! Every transform allocates a few n²-sized buffers. With glibc's default
//! thresholds those are returned to the kernel on free and page-faulted back
//! in on the next step, which costs more than the FFT itself at n = 128.

use std::sync::Once;

static TUNE: Once = Once::new();

/// Keep freed heap memory mapped for reuse. Idempotent; a no-op off glibc.
pub fn retain_freed_memory() {
    TUNE.call_once(|| {
        #[cfg(all(target_os = "linux", target_env = "gnu"))]
        // SAFETY: mallopt only adjusts allocator thresholds and is called
        // once, before any worker threads are spawned by this crate.
        unsafe {
            libc::mallopt(libc::M_MMAP_THRESHOLD, 32 << 20);
            libc::mallopt(libc::M_TRIM_THRESHOLD, i32::MAX);
        }
    });
}
