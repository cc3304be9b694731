//! Thread CPU time and a small list scheduler.
//!
//! Timing runs report virtual time: each task is charged the CPU time its
//! thread actually spent, and tasks are placed on `W` modelled workers in
//! order. On a machine with fewer cores than ranks times workers this gives
//! the time the same run would take with enough cores, instead of a wall
//! clock inflated by time sharing.

use std::cell::RefCell;
use std::sync::{Mutex, MutexGuard};

/// CPU time consumed by the calling thread, seconds.
pub fn thread_cpu_time() -> f64 {
    let mut ts = libc::timespec { tv_sec: 0, tv_nsec: 0 };
    // SAFETY: `ts` is a valid out-pointer and the clock id is a constant.
    let rc = unsafe { libc::clock_gettime(libc::CLOCK_THREAD_CPUTIME_ID, &mut ts) };
    if rc != 0 {
        return 0.0;
    }
    ts.tv_sec as f64 + ts.tv_nsec as f64 * 1e-9
}

static TURN: Mutex<()> = Mutex::new(());

thread_local! {
    static HELD: RefCell<Option<MutexGuard<'static, ()>>> = const { RefCell::new(None) };
}

/// Cooperative turn taking between threads that would otherwise share too
/// few cores. The holder runs until it blocks (see [`blocking`]), so the
/// scheduler does not preempt it halfway through a computation and charge
/// it for refilling its caches afterwards.
pub struct Turn(bool);

impl Turn {
    /// Wait for the turn when `enabled`; a no-op guard otherwise.
    pub fn take(enabled: bool) -> Self {
        if enabled {
            let g = TURN.lock().unwrap_or_else(|e| e.into_inner());
            HELD.with(|h| *h.borrow_mut() = Some(g));
        }
        Turn(enabled)
    }
}

impl Drop for Turn {
    fn drop(&mut self) {
        if self.0 {
            HELD.with(|h| h.borrow_mut().take());
        }
    }
}

/// Run a blocking call, handing the turn to other threads meanwhile.
pub fn blocking<T>(f: impl FnOnce() -> T) -> T {
    let held = HELD.with(|h| h.borrow_mut().take()).is_some();
    let out = f();
    if held {
        let g = TURN.lock().unwrap_or_else(|e| e.into_inner());
        HELD.with(|h| *h.borrow_mut() = Some(g));
    }
    out
}

/// Run `f` and return its result with the CPU time it took on this thread.
pub fn measure<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let t0 = thread_cpu_time();
    let out = f();
    (out, (thread_cpu_time() - t0).max(0.0))
}

/// Makespan of `durations` list-scheduled in order on `workers` workers
/// (each task goes to the worker that frees up first, lowest index on ties).
pub fn list_schedule(durations: &[f64], workers: usize) -> f64 {
    let mut free = vec![0.0f64; workers.max(1)];
    for &d in durations {
        let (i, _) = free
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("at least one worker");
        free[i] += d;
    }
    free.into_iter().fold(0.0, f64::max)
}
