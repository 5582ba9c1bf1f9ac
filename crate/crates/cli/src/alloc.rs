//! Allocator tuning for long forward loops.

/// Keep freed buffers in the heap rather than unmapping them. Large
/// activations otherwise come back as fresh `mmap`s that page-fault on
/// first write. No-op outside glibc.
pub fn retain_freed_memory() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    unsafe {
        libc::mallopt(libc::M_MMAP_MAX, 0);
        libc::mallopt(libc::M_TRIM_THRESHOLD, i32::MAX);
    }
}
