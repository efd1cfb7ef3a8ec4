//! Square 2D FFTs on row-major buffers, with optional invocation counting.
//!
//! Transforms are unnormalized. The *centered* variants treat index `G/2`
//! as the origin in both domains, which for even `G` reduces to a
//! checkerboard modulation before and after the plain transform.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rustfft::{Fft, FftDirection, FftPlanner};

use crate::C32;

/// Which part of the algorithm issued a transform.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FftUse {
    /// Inside the normal operator `DF^H DF` (one call per CG iteration).
    Normal,
    /// Residual and right-hand-side setup once per Newton step.
    Setup,
    /// Everything else: gridding, PSF construction, benchmarking.
    Other,
}

/// Per-channel 2D FFT invocation counters.
#[derive(Debug, Default)]
pub struct FftCounter {
    normal: AtomicU64,
    setup: AtomicU64,
    other: AtomicU64,
}

impl FftCounter {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    fn bump(&self, kind: FftUse) {
        let slot = match kind {
            FftUse::Normal => &self.normal,
            FftUse::Setup => &self.setup,
            FftUse::Other => &self.other,
        };
        slot.fetch_add(1, Ordering::Relaxed);
    }

    pub fn normal(&self) -> u64 {
        self.normal.load(Ordering::Relaxed)
    }

    pub fn setup(&self) -> u64 {
        self.setup.load(Ordering::Relaxed)
    }

    pub fn other(&self) -> u64 {
        self.other.load(Ordering::Relaxed)
    }

    pub fn total(&self) -> u64 {
        self.normal() + self.setup() + self.other()
    }

    pub fn reset(&self) {
        self.normal.store(0, Ordering::Relaxed);
        self.setup.store(0, Ordering::Relaxed);
        self.other.store(0, Ordering::Relaxed);
    }
}

/// Planned forward/inverse transforms for one square side length.
#[derive(Clone)]
pub struct Fft2 {
    size: usize,
    forward: Arc<dyn Fft<f32>>,
    inverse: Arc<dyn Fft<f32>>,
    counter: Option<Arc<FftCounter>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2").field("size", &self.size).finish()
    }
}

impl Fft2 {
    pub fn new(size: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self::with_planner(&mut planner, size)
    }

    pub fn with_planner(planner: &mut FftPlanner<f32>, size: usize) -> Self {
        assert!(size > 0, "FFT size must be positive");
        Self {
            size,
            forward: planner.plan_fft(size, FftDirection::Forward),
            inverse: planner.plan_fft(size, FftDirection::Inverse),
            counter: None,
        }
    }

    pub fn with_counter(mut self, counter: Arc<FftCounter>) -> Self {
        self.counter = Some(counter);
        self
    }

    pub fn counter(&self) -> Option<&Arc<FftCounter>> {
        self.counter.as_ref()
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Scratch length needed by [`Fft2::forward`] and friends.
    pub fn scratch_len(&self) -> usize {
        self.forward
            .get_inplace_scratch_len()
            .max(self.inverse.get_inplace_scratch_len())
    }

    pub fn make_scratch(&self) -> Vec<C32> {
        vec![C32::default(); self.scratch_len()]
    }

    /// `X[m] = sum_n x[n] exp(-2 pi i m.n / G)`, in place.
    pub fn forward(&self, data: &mut [C32], scratch: &mut Vec<C32>, usage: FftUse) {
        self.run(data, scratch, FftDirection::Forward, usage);
    }

    /// `x[n] = sum_m X[m] exp(+2 pi i m.n / G)`, in place, no `1/G^2`.
    pub fn inverse(&self, data: &mut [C32], scratch: &mut Vec<C32>, usage: FftUse) {
        self.run(data, scratch, FftDirection::Inverse, usage);
    }

    /// Forward transform with the origin of both domains at index `G/2`.
    pub fn forward_centered(&self, data: &mut [C32], scratch: &mut Vec<C32>, usage: FftUse) {
        checkerboard(data, self.size);
        self.forward(data, scratch, usage);
        checkerboard(data, self.size);
    }

    pub fn inverse_centered(&self, data: &mut [C32], scratch: &mut Vec<C32>, usage: FftUse) {
        checkerboard(data, self.size);
        self.inverse(data, scratch, usage);
        checkerboard(data, self.size);
    }

    fn run(&self, data: &mut [C32], scratch: &mut Vec<C32>, dir: FftDirection, usage: FftUse) {
        let n = self.size;
        assert_eq!(data.len(), n * n, "buffer is not {n}x{n}");
        let plan = match dir {
            FftDirection::Forward => &self.forward,
            FftDirection::Inverse => &self.inverse,
        };
        let need = plan.get_inplace_scratch_len();
        if scratch.len() < need {
            scratch.resize(need, C32::default());
        }
        plan.process_with_scratch(data, &mut scratch[..need]);
        transpose_square(data, n);
        plan.process_with_scratch(data, &mut scratch[..need]);
        transpose_square(data, n);
        if let Some(counter) = &self.counter {
            counter.bump(usage);
        }
    }
}

/// Multiplies by `(-1)^(x+y)`. Only valid as a centering shift for even `n`.
fn checkerboard(data: &mut [C32], n: usize) {
    debug_assert!(n.is_multiple_of(2), "centered transforms need an even size");
    for (y, row) in data.chunks_exact_mut(n).enumerate() {
        let start = y % 2;
        for v in row.iter_mut().skip(1 - start).step_by(2) {
            *v = -*v;
        }
    }
}

const BLOCK: usize = 32;

fn transpose_square(data: &mut [C32], n: usize) {
    for by in (0..n).step_by(BLOCK) {
        for bx in (by..n).step_by(BLOCK) {
            for y in by..(by + BLOCK).min(n) {
                let x0 = if bx == by { y + 1 } else { bx };
                for x in x0..(bx + BLOCK).min(n) {
                    data.swap(y * n + x, x * n + y);
                }
            }
        }
    }
}
