//! PointGoal navigation on a point-cloud canonical observation space.
//!
//! Depth images are projected into the robot base frame, integrated over
//! recent keyframes, cropped and downsampled to a fixed-size cloud, then
//! encoded by a point-cloud network feeding a recurrent actor-critic trained
//! with PPO.

pub mod bench;
pub mod cloud;
pub mod config;
pub mod error;
pub mod geom;
pub mod nn;
pub mod rl;
pub mod sim;
pub mod task;

pub use error::{Error, Result};

/// Keeps freed large buffers in the heap instead of returning them to the
/// OS. Training allocates and drops tens of megabytes per layer call, and
/// with the glibc defaults each allocation page-faults afresh. Affects the
/// whole process; a no-op on other platforms.
pub fn tune_allocator() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    // SAFETY: mallopt only adjusts allocator thresholds.
    unsafe {
        libc::mallopt(libc::M_MMAP_MAX, 0);
        libc::mallopt(libc::M_TRIM_THRESHOLD, i32::MAX);
    }
}
