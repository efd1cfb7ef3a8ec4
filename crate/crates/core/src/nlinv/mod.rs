//! Nonlinear inversion: joint estimation of image and coil sensitivities.
//!
//! The unknown is `x = (rho, c_1..c_J)`. Coils are parametrized in k-space
//! as `c_j = W^{-1} c^_j`, where `W` weights high frequencies by
//! `(1 + a|k|^2)^b` and `c^_j` is stored only on the central `G_c x G_c`
//! block. Each frame runs a fixed number of Gauss-Newton steps
//!
//! `(DF^H DF + alpha_m I) dx = DF^H (z - F^H F(rho c)) - alpha_m (x - x_prev)`
//!
//! solved by a Krylov method. Data enter only as the gridded `z = F^H D y`
//! and the point-spread kernel of the frame's trajectory.

mod cg;
mod irgnm;
mod ops;

use rayon::prelude::*;

use crate::planner::ReconPlan;
use crate::C32;

pub use cg::{cg_solve, CgReport};
pub use irgnm::{newton_step, reconstruct_frame, scale_to_norm, FrameResult, NewtonState, Solver};
pub use ops::{NlinvOp, StepCache};

/// Coil smoothness weight `w(k) = (1 + a |k|^2)^b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightSpec {
    pub a: f64,
    pub b: f64,
}

impl Default for WeightSpec {
    fn default() -> Self {
        Self { a: 880.0, b: 16.0 }
    }
}

/// `1/w` below this is stored as zero to keep single precision out of
/// the subnormal range.
const MIN_INV_WEIGHT: f64 = 1e-30;

impl WeightSpec {
    pub fn weight(&self, k: [f64; 2]) -> f64 {
        (1.0 + self.a * (k[0] * k[0] + k[1] * k[1])).powf(self.b)
    }

    /// `1/w` on the `gc x gc` coil block of a `g`-grid. Frequencies are in
    /// cycles per pixel of the full grid, so the block spans
    /// `|k| < gc / (2g)` and cropping changes only where `w` is stored.
    pub fn inverse_weights(&self, g: usize, gc: usize) -> Vec<f32> {
        let half = (gc / 2) as f64;
        (0..gc * gc)
            .map(|i| {
                let k = [
                    ((i % gc) as f64 - half) / g as f64,
                    ((i / gc) as f64 - half) / g as f64,
                ];
                let inv = 1.0 / self.weight(k);
                if inv < MIN_INV_WEIGHT {
                    0.0
                } else {
                    inv as f32
                }
            })
            .collect()
    }
}

/// Transformed unknowns `x^ = (rho, c^_1..c^_J)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Estimate {
    pub g: usize,
    pub gc: usize,
    pub channels: usize,
    /// `[G][G]`, image domain.
    pub rho: Vec<C32>,
    /// `[J][G_c][G_c]`, weighted k-space.
    pub coils: Vec<C32>,
}

impl Estimate {
    pub fn zeros(g: usize, gc: usize, channels: usize) -> Self {
        Self {
            g,
            gc,
            channels,
            rho: vec![C32::default(); g * g],
            coils: vec![C32::default(); channels * gc * gc],
        }
    }

    pub fn zeros_for(plan: &ReconPlan, channels: usize) -> Self {
        Self::zeros(plan.g, plan.gc, channels)
    }

    /// First-frame start: `rho = 1`, all coils zero.
    pub fn initial(plan: &ReconPlan, channels: usize) -> Self {
        let mut x = Self::zeros_for(plan, channels);
        x.rho.fill(C32::new(1.0, 0.0));
        x
    }

    pub fn same_shape(&self, other: &Estimate) -> bool {
        self.g == other.g && self.gc == other.gc && self.channels == other.channels
    }

    pub fn coil(&self, j: usize) -> &[C32] {
        let n = self.gc * self.gc;
        &self.coils[j * n..(j + 1) * n]
    }

    pub fn coil_mut(&mut self, j: usize) -> &mut [C32] {
        let n = self.gc * self.gc;
        &mut self.coils[j * n..(j + 1) * n]
    }

    pub fn is_finite(&self) -> bool {
        self.rho
            .iter()
            .chain(&self.coils)
            .all(|v| v.re.is_finite() && v.im.is_finite())
    }

    fn parts(&self) -> [&[C32]; 2] {
        [&self.rho, &self.coils]
    }

    /// `Re <self, other>`, accumulated in f64 over fixed-size chunks in a
    /// fixed order, so the value does not depend on the thread count.
    pub fn dot_re(&self, other: &Estimate) -> f64 {
        debug_assert!(self.same_shape(other));
        let mut total = 0.0;
        for (a, b) in self.parts().iter().zip(other.parts()) {
            let partial: Vec<f64> = a
                .par_chunks(4096)
                .zip(b.par_chunks(4096))
                .map(|(x, y)| {
                    x.iter()
                        .zip(y)
                        .map(|(u, v)| u.re as f64 * v.re as f64 + u.im as f64 * v.im as f64)
                        .sum::<f64>()
                })
                .collect();
            total += partial.iter().sum::<f64>();
        }
        total
    }

    pub fn norm(&self) -> f64 {
        self.dot_re(self).sqrt()
    }

    /// `self += s * other`.
    pub fn axpy(&mut self, s: f32, other: &Estimate) {
        self.rho
            .par_iter_mut()
            .zip(other.rho.par_iter())
            .for_each(|(a, b)| *a += b * s);
        self.coils
            .par_iter_mut()
            .zip(other.coils.par_iter())
            .for_each(|(a, b)| *a += b * s);
    }

    /// `self = other + s * self`.
    pub fn xpay(&mut self, s: f32, other: &Estimate) {
        self.rho
            .par_iter_mut()
            .zip(other.rho.par_iter())
            .for_each(|(a, b)| *a = b + *a * s);
        self.coils
            .par_iter_mut()
            .zip(other.coils.par_iter())
            .for_each(|(a, b)| *a = b + *a * s);
    }

    pub fn scale(&mut self, s: f32) {
        self.rho.par_iter_mut().for_each(|v| *v *= s);
        self.coils.par_iter_mut().for_each(|v| *v *= s);
    }

    pub fn fill_zero(&mut self) {
        self.rho.fill(C32::default());
        self.coils.fill(C32::default());
    }
}
