//! Radial interleaved-turn trajectories and synthetic multi-coil data.
//!
//! Each frame acquires `K` full-diameter spokes spaced `2 pi / K` apart.
//! Successive frames rotate the whole set by `2 pi / (K U)`, so `U`
//! consecutive frames (one cycle of turns) tile the `K U` angles uniformly.
//! Readout positions are in cycles per pixel and span `[-0.5, 0.5)`.

mod bessel;
mod coils;
mod phantom;

use std::f64::consts::PI;

use crate::{Error, Result, C32};

pub use bessel::j1;
pub use coils::{coil_sensitivity, CoilModel};
pub use phantom::{simulate_frame, simulate_slice, Ellipse, Motion, PhantomSpec};

const TWO_PI: f64 = 2.0 * PI;

/// Radial acquisition scheme: `K` spokes per frame, `U` turns.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectorySpec {
    pub spokes: usize,
    pub turns: usize,
    /// Readout samples per spoke, `2N` for an `N`-pixel image.
    pub samples_per_spoke: usize,
    pub base_angle: f64,
}

impl TrajectorySpec {
    pub fn new(spokes: usize, turns: usize, samples_per_spoke: usize) -> Self {
        Self {
            spokes,
            turns,
            samples_per_spoke,
            base_angle: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.spokes == 0 || self.turns == 0 || self.samples_per_spoke == 0 {
            return Err(Error::config(format!(
                "trajectory needs K, U and samples per spoke >= 1 (got K={}, U={}, S={})",
                self.spokes, self.turns, self.samples_per_spoke
            )));
        }
        if !self.base_angle.is_finite() {
            return Err(Error::config("base angle is not finite"));
        }
        Ok(())
    }

    /// Angle between neighbouring spokes of one frame, `sigma = 2 pi / K`.
    pub fn sigma(&self) -> f64 {
        TWO_PI / self.spokes as f64
    }

    /// Rotation between successive turns, `tau = 2 pi / (K U)`.
    pub fn tau(&self) -> f64 {
        TWO_PI / (self.spokes * self.turns) as f64
    }

    /// Index of the turn that frame `n` uses.
    pub fn turn_of(&self, frame: usize) -> usize {
        frame % self.turns
    }

    pub fn spoke_angle(&self, frame: usize, spoke: usize) -> f64 {
        spoke_angle(self, frame, spoke)
    }

    pub fn frame_angles(&self, frame: usize) -> Vec<f64> {
        (0..self.spokes).map(|k| self.spoke_angle(frame, k)).collect()
    }

    /// Signed readout radius of sample `s`, in cycles per pixel.
    pub fn readout_radius(&self, s: usize) -> f64 {
        let half = (self.samples_per_spoke / 2) as f64;
        (s as f64 - half) / self.samples_per_spoke as f64
    }

    /// Spacing of readout samples along a spoke.
    pub fn readout_step(&self) -> f64 {
        1.0 / self.samples_per_spoke as f64
    }
}

/// `k sigma + (n mod U) tau + base_angle`, reduced to `[0, 2 pi)`.
pub fn spoke_angle(spec: &TrajectorySpec, frame: usize, spoke: usize) -> f64 {
    debug_assert!(spoke < spec.spokes);
    let turn = (frame % spec.turns) as f64;
    let raw = spoke as f64 * spec.sigma() + turn * spec.tau() + spec.base_angle;
    let reduced = raw.rem_euclid(TWO_PI);
    // rem_euclid can round up to exactly 2 pi
    if reduced >= TWO_PI {
        0.0
    } else {
        reduced
    }
}

/// k-space coordinates `(kx, ky)` of every sample, spoke-major.
pub fn radial_coords(angles: &[f64], samples_per_spoke: usize) -> Vec<[f64; 2]> {
    let half = (samples_per_spoke / 2) as f64;
    let mut out = Vec::with_capacity(angles.len() * samples_per_spoke);
    for &theta in angles {
        let (s, c) = theta.sin_cos();
        for i in 0..samples_per_spoke {
            let r = (i as f64 - half) / samples_per_spoke as f64;
            out.push([r * c, r * s]);
        }
    }
    out
}

/// One frame of multi-channel radial samples.
///
/// `samples` is laid out `[channel][spoke][sample]`.
#[derive(Clone, Debug, PartialEq)]
pub struct KSpaceFrame {
    pub frame_index: usize,
    pub slice_id: usize,
    pub channels: usize,
    pub spokes: usize,
    pub samples_per_spoke: usize,
    pub spoke_angles: Vec<f64>,
    pub samples: Vec<C32>,
}

impl KSpaceFrame {
    pub fn zeros(
        frame_index: usize,
        slice_id: usize,
        channels: usize,
        spoke_angles: Vec<f64>,
        samples_per_spoke: usize,
    ) -> Self {
        let spokes = spoke_angles.len();
        Self {
            frame_index,
            slice_id,
            channels,
            spokes,
            samples_per_spoke,
            spoke_angles,
            samples: vec![C32::default(); channels * spokes * samples_per_spoke],
        }
    }

    pub fn samples_per_channel(&self) -> usize {
        self.spokes * self.samples_per_spoke
    }

    pub fn channel(&self, j: usize) -> &[C32] {
        let n = self.samples_per_channel();
        &self.samples[j * n..(j + 1) * n]
    }

    pub fn channel_mut(&mut self, j: usize) -> &mut [C32] {
        let n = self.samples_per_channel();
        &mut self.samples[j * n..(j + 1) * n]
    }

    pub fn sample(&self, j: usize, spoke: usize, s: usize) -> C32 {
        self.samples[(j * self.spokes + spoke) * self.samples_per_spoke + s]
    }

    pub fn coords(&self) -> Vec<[f64; 2]> {
        radial_coords(&self.spoke_angles, self.samples_per_spoke)
    }

    pub fn validate(&self) -> Result<()> {
        if self.spoke_angles.len() != self.spokes {
            return Err(Error::format(format!(
                "{} spoke angles for {} spokes",
                self.spoke_angles.len(),
                self.spokes
            )));
        }
        let expected = self.channels * self.spokes * self.samples_per_spoke;
        if self.samples.len() != expected {
            return Err(Error::format(format!(
                "frame {} holds {} samples, expected {expected}",
                self.frame_index,
                self.samples.len()
            )));
        }
        if self.spoke_angles.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite(format!(
                "spoke angles of frame {}",
                self.frame_index
            )));
        }
        if self.samples.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::NonFinite(format!("samples of frame {}", self.frame_index)));
        }
        Ok(())
    }
}
