//! Preprocessing: channel compression, gridding of radial samples onto the
//! oversampled Cartesian grid and point-spread kernels for the Toeplitz
//! normal operator.
//!
//! Geometry shared by everything in here: the grid has even side `G`, the
//! reconstructed field-of-view is the central `G/2 x G/2` block, and all
//! image arrays keep their origin at index `G/2` in both directions.

mod compression;
mod kb;
mod psf;

use rayon::prelude::*;

use crate::fft::Fft2;
use crate::planner::ReconPlan;
use crate::seqsim::KSpaceFrame;
use crate::{Error, Result, C32};

pub use compression::{calibrate_compression, CompressionMatrix};
pub use kb::{bessel_i0, Gridder, KB_WIDTH};
pub use psf::{angles_key, build_psf, PsfCache, PsfKernel};

/// Per-channel `F^H D y` on the `G x G` grid, masked to the field-of-view.
#[derive(Clone, Debug, PartialEq)]
pub struct GriddedData {
    pub g: usize,
    pub channels: usize,
    /// `[channel][y][x]`.
    pub z: Vec<C32>,
}

impl GriddedData {
    pub fn zeros(g: usize, channels: usize) -> Self {
        Self {
            g,
            channels,
            z: vec![C32::default(); channels * g * g],
        }
    }

    pub fn channel(&self, j: usize) -> &[C32] {
        let n = self.g * self.g;
        &self.z[j * n..(j + 1) * n]
    }

    pub fn channel_mut(&mut self, j: usize) -> &mut [C32] {
        let n = self.g * self.g;
        &mut self.z[j * n..(j + 1) * n]
    }

    pub fn norm(&self) -> f64 {
        self.z.iter().map(|v| v.norm_sqr() as f64).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: f32) {
        for v in &mut self.z {
            *v *= factor;
        }
    }

    pub fn check(&self, plan: &ReconPlan) -> Result<()> {
        if self.g != plan.g || self.z.len() != self.channels * self.g * self.g {
            return Err(Error::config(format!(
                "gridded data is {} channels on {}^2, plan expects G={}",
                self.channels, self.g, plan.g
            )));
        }
        Ok(())
    }
}

/// Field-of-view mask: `true` on the central `G/2 x G/2` block.
pub fn fov_mask(g: usize) -> Vec<bool> {
    let l = g / 2;
    let lo = g / 2 - l / 2;
    (0..g * g)
        .map(|i| {
            let (y, x) = (i / g, i % g);
            (lo..lo + l).contains(&y) && (lo..lo + l).contains(&x)
        })
        .collect()
}

/// Radial density compensation: area of the polar cell each sample
/// represents, so that the weights of a full frame sum to the area of the
/// disc `|k| < 1/2`. Samples with `|r| >= 1/2` get zero weight, which keeps
/// the weighted sample set point-symmetric.
pub fn radial_dcf(spokes: usize, samples_per_spoke: usize) -> Vec<f64> {
    use std::f64::consts::PI;
    let s = samples_per_spoke as f64;
    let half = samples_per_spoke / 2;
    let per_spoke: Vec<f64> = (0..samples_per_spoke)
        .map(|i| {
            let r = (i as f64 - half as f64) / s;
            if r.abs() >= 0.5 {
                0.0
            } else if i == half {
                PI * (0.5 / s).powi(2) / spokes as f64
            } else {
                r.abs() / s * PI / spokes as f64
            }
        })
        .collect();
    per_spoke.repeat(spokes)
}

/// Radial sample positions with a constant readout shift of `delay`
/// samples applied along every spoke. Estimating the delay is up to the
/// caller; zero reproduces the nominal trajectory.
pub fn corrected_coords(angles: &[f64], samples_per_spoke: usize, delay: f64) -> Vec<[f64; 2]> {
    let mut coords = crate::seqsim::radial_coords(angles, samples_per_spoke);
    if delay != 0.0 {
        let shift = delay / samples_per_spoke as f64;
        for (spoke, &theta) in angles.iter().enumerate() {
            let (s, c) = theta.sin_cos();
            for k in &mut coords[spoke * samples_per_spoke..(spoke + 1) * samples_per_spoke] {
                k[0] += shift * c;
                k[1] += shift * s;
            }
        }
    }
    coords
}

/// Grids every channel of `frame` with the Kaiser-Bessel kernel and radial
/// density compensation, returning `F^H D y` per channel.
pub fn grid_adjoint(frame: &KSpaceFrame, plan: &ReconPlan) -> Result<GriddedData> {
    grid_adjoint_with_delay(frame, plan, 0.0)
}

pub fn grid_adjoint_with_delay(
    frame: &KSpaceFrame,
    plan: &ReconPlan,
    delay: f64,
) -> Result<GriddedData> {
    frame.validate()?;
    let coords = corrected_coords(&frame.spoke_angles, frame.samples_per_spoke, delay);
    let dcf = radial_dcf(frame.spokes, frame.samples_per_spoke);
    let gridder = Gridder::new(&coords, plan.g)?;
    let fft = Fft2::new(plan.g);
    let mut out = GriddedData::zeros(plan.g, frame.channels);
    let per = plan.g * plan.g;
    out.z
        .par_chunks_mut(per)
        .enumerate()
        .for_each(|(j, dst)| {
            let weighted: Vec<C32> = frame
                .channel(j)
                .iter()
                .zip(&dcf)
                .map(|(v, w)| v * *w as f32)
                .collect();
            gridder.adjoint_into(&weighted, &fft, dst);
        });
    Ok(out)
}
