//! Peak-memory and wall-time measurement of training and inference runs.
//!
//! Exact heap figures require installing [`CountingAllocator`] as the global
//! allocator of the executable. Without it the process peak resident set
//! (reset through `/proc/self/clear_refs` where permitted) is used and the
//! record is flagged accordingly.

use std::alloc::{GlobalAlloc, Layout, System};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::time::Instant;

use serde::{Deserialize, Serialize};

static CURRENT: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);
static INSTALLED: AtomicBool = AtomicBool::new(false);

/// System allocator that tracks live and peak heap bytes.
pub struct CountingAllocator;

unsafe impl GlobalAlloc for CountingAllocator {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = System.alloc(layout);
        if !p.is_null() {
            track_alloc(layout.size());
        }
        p
    }

    unsafe fn alloc_zeroed(&self, layout: Layout) -> *mut u8 {
        let p = System.alloc_zeroed(layout);
        if !p.is_null() {
            track_alloc(layout.size());
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout);
        CURRENT.fetch_sub(layout.size(), Ordering::Relaxed);
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let p = System.realloc(ptr, layout, new_size);
        if !p.is_null() {
            CURRENT.fetch_sub(layout.size(), Ordering::Relaxed);
            track_alloc(new_size);
        }
        p
    }
}

fn track_alloc(size: usize) {
    if !INSTALLED.load(Ordering::Relaxed) {
        INSTALLED.store(true, Ordering::Relaxed);
    }
    let now = CURRENT.fetch_add(size, Ordering::Relaxed) + size;
    PEAK.fetch_max(now, Ordering::Relaxed);
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemorySource {
    /// Exact live-heap peak from the counting allocator.
    HeapAllocator,
    /// Process peak resident set size; includes everything else in the process.
    ProcessPeakRss,
    Unavailable,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    /// Peak bytes above the level at the start of the run.
    pub peak_bytes: u64,
    pub wall_time_s: f64,
    pub source: MemorySource,
}

fn read_status_kb(key: &str) -> Option<u64> {
    let text = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = text.lines().find(|l| l.starts_with(key))?;
    line.split_whitespace().nth(1)?.parse().ok().map(|kb: u64| kb * 1024)
}

/// Time `f` and record its memory high-water mark.
pub fn measure<R>(f: impl FnOnce() -> R) -> (R, Measurement) {
    if INSTALLED.load(Ordering::Relaxed) {
        let base = CURRENT.load(Ordering::Relaxed);
        PEAK.store(base, Ordering::Relaxed);
        let start = Instant::now();
        let out = f();
        let wall = start.elapsed().as_secs_f64();
        let peak = PEAK.load(Ordering::Relaxed).saturating_sub(base);
        return (out, Measurement { peak_bytes: peak as u64, wall_time_s: wall, source: MemorySource::HeapAllocator });
    }
    let reset = std::fs::write("/proc/self/clear_refs", "5").is_ok();
    let base = read_status_kb("VmRSS:");
    let start = Instant::now();
    let out = f();
    let wall = start.elapsed().as_secs_f64();
    let (peak, source) = match (reset, base, read_status_kb("VmHWM:")) {
        (true, Some(b), Some(hwm)) => (hwm.saturating_sub(b), MemorySource::ProcessPeakRss),
        _ => (0, MemorySource::Unavailable),
    };
    (out, Measurement { peak_bytes: peak, wall_time_s: wall, source })
}

/// Memory and time consumption of one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileRecord {
    pub model: String,
    pub parameter_count: usize,
    pub training_peak_bytes: u64,
    pub training_time_s: f64,
    /// Wall time of a 97-step autoregressive prediction.
    pub inference_time_s: Option<f64>,
    pub memory_source: MemorySource,
}

impl ProfileRecord {
    pub fn new(model: &str, parameter_count: usize, training: Measurement, inference_time_s: Option<f64>) -> Self {
        Self {
            model: model.into(),
            parameter_count,
            training_peak_bytes: training.peak_bytes,
            training_time_s: training.wall_time_s,
            inference_time_s,
            memory_source: training.source,
        }
    }
}

pub fn render_profile_table(records: &[ProfileRecord]) -> String {
    let mut s = format!("{:<24} {:>12} {:>14} {:>12} {:>14} {}\n", "model", "parameters", "peak_mem_MB", "train_s", "infer_97_s", "memory_source");
    for r in records {
        let infer = r.inference_time_s.map_or("-".to_string(), |t| format!("{t:.3}"));
        s += &format!(
            "{:<24} {:>12} {:>14.3} {:>12.2} {:>14} {:?}\n",
            r.model,
            r.parameter_count,
            r.training_peak_bytes as f64 / 1e6,
            r.training_time_s,
            infer,
            r.memory_source
        );
    }
    s
}
