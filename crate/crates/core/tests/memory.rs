//! Peak heap usage of a streamed query stays flat as the stream grows.

use std::alloc::{GlobalAlloc, Layout, System};
use std::sync::atomic::{AtomicUsize, Ordering};

use streamq::engine::{run_query, RunOptions};
use streamq::oracle::ColumnOracle;
use streamq::synth::SynthGenerator;
use streamq::types::BudgetPlan;

struct Counting;

static LIVE: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);

unsafe impl GlobalAlloc for Counting {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = unsafe { System.alloc(layout) };
        if !p.is_null() {
            let now = LIVE.fetch_add(layout.size(), Ordering::Relaxed) + layout.size();
            PEAK.fetch_max(now, Ordering::Relaxed);
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        unsafe { System.dealloc(ptr, layout) };
        LIVE.fetch_sub(layout.size(), Ordering::Relaxed);
    }
}

#[global_allocator]
static GLOBAL: Counting = Counting;

fn peak_for(length: u64) -> usize {
    let plan = BudgetPlan::with_defensive_fraction(500, 0.1, 3, 0.8).unwrap();
    let generator = SynthGenerator::new(2, length, 3, 0.75, 1).unwrap();
    let base = LIVE.load(Ordering::Relaxed);
    PEAK.store(base, Ordering::Relaxed);
    let mut run = run_query(generator.map(Ok), RunOptions::new(plan, 100_000, 1), ColumnOracle::new(true)).unwrap();
    for report in run.by_ref() {
        report.unwrap();
    }
    run.estimate().unwrap();
    PEAK.load(Ordering::Relaxed) - base
}

#[test]
fn peak_memory_does_not_grow_with_stream_length() {
    let short = peak_for(1_000_000);
    let long = peak_for(10_000_000);
    // Per-segment buffers depend on the window, not on how many windows
    // pass. What does grow is the retained sample (needed for the final
    // estimate and bootstrap): 500 calls for each of 90 extra segments.
    let extra_calls = 90 * 500;
    assert!(short < 8 << 20, "short run peaked at {short} bytes");
    assert!(long < short + 128 * extra_calls, "peak grew from {short} to {long} bytes");
}
