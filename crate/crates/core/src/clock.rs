//! Training-time clocks.

use serde::{Deserialize, Serialize};

/// Seconds charged per optimizer step by the virtual clock.
pub const VIRTUAL_SECONDS_PER_STEP: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClockKind {
    /// CPU time consumed by the training thread.
    Cpu,
    /// A fixed charge per optimizer step; fully reproducible.
    Virtual,
}

impl std::str::FromStr for ClockKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "cpu" => Ok(Self::Cpu),
            "virtual" => Ok(Self::Virtual),
            _ => Err(format!("unknown clock `{s}`; expected `cpu` or `virtual`")),
        }
    }
}

/// CPU seconds consumed by the calling thread.
pub fn thread_cpu_seconds() -> f64 {
    let mut ts = libc::timespec { tv_sec: 0, tv_nsec: 0 };
    // SAFETY: `ts` is a valid out-pointer and the clock id is a constant.
    let rc = unsafe { libc::clock_gettime(libc::CLOCK_THREAD_CPUTIME_ID, &mut ts) };
    assert_eq!(rc, 0, "clock_gettime(CLOCK_THREAD_CPUTIME_ID) failed");
    ts.tv_sec as f64 + ts.tv_nsec as f64 * 1e-9
}

/// Elapsed training time, continuing from `offset` seconds at `start_step`.
#[derive(Debug, Clone)]
pub struct RunClock {
    kind: ClockKind,
    offset: f64,
    start_step: u64,
    start_cpu: f64,
}

impl RunClock {
    pub fn start(kind: ClockKind, offset: f64, start_step: u64) -> Self {
        Self { kind, offset, start_step, start_cpu: thread_cpu_seconds() }
    }

    pub fn elapsed(&self, step: u64) -> f64 {
        match self.kind {
            ClockKind::Cpu => self.offset + (thread_cpu_seconds() - self.start_cpu).max(0.0),
            ClockKind::Virtual => self.offset + (step - self.start_step) as f64 * VIRTUAL_SECONDS_PER_STEP,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cpu_clock_advances_with_work() {
        let c = RunClock::start(ClockKind::Cpu, 2.0, 0);
        let mut x = 0u64;
        for i in 0..5_000_000u64 {
            x = x.wrapping_mul(31).wrapping_add(i);
        }
        std::hint::black_box(x);
        assert!(c.elapsed(0) > 2.0);
    }

    #[test]
    fn virtual_clock_counts_steps() {
        let c = RunClock::start(ClockKind::Virtual, 10.0, 4);
        assert_eq!(c.elapsed(4), 10.0);
        assert_eq!(c.elapsed(9), 15.0);
    }
}
