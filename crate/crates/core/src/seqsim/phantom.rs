//! Analytic ellipse phantoms and their k-space samples.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::bessel::disc_transform;
use super::coils::{coil_harmonics, CoilModel};
use super::{KSpaceFrame, TrajectorySpec};
use crate::fft::{Fft2, FftUse};
use crate::{Error, Result, C32};

/// Filled ellipse in pixel coordinates relative to the image centre.
#[derive(Clone, Debug, PartialEq)]
pub struct Ellipse {
    pub center: [f64; 2],
    /// Semi-axes along the rotated x and y directions.
    pub axes: [f64; 2],
    pub angle: f64,
    pub amplitude: Complex64,
}

impl Ellipse {
    /// Continuous Fourier transform at `k` (cycles per pixel).
    pub fn spectrum(&self, k: [f64; 2], shift: [f64; 2]) -> Complex64 {
        let (s, c) = self.angle.sin_cos();
        let ku = k[0] * c + k[1] * s;
        let kv = -k[0] * s + k[1] * c;
        let kappa = ((self.axes[0] * ku).powi(2) + (self.axes[1] * kv).powi(2)).sqrt();
        let cx = self.center[0] + shift[0];
        let cy = self.center[1] + shift[1];
        let phase = Complex64::from_polar(1.0, -2.0 * PI * (k[0] * cx + k[1] * cy));
        self.amplitude * phase * (self.axes[0] * self.axes[1] * disc_transform(kappa))
    }

    pub fn contains(&self, p: [f64; 2], shift: [f64; 2]) -> bool {
        let dx = p[0] - self.center[0] - shift[0];
        let dy = p[1] - self.center[1] - shift[1];
        let (s, c) = self.angle.sin_cos();
        let u = (dx * c + dy * s) / self.axes[0];
        let v = (-dx * s + dy * c) / self.axes[1];
        u * u + v * v <= 1.0
    }
}

/// Per-frame displacement of one ellipse.
#[derive(Clone, Debug, PartialEq)]
pub enum Motion {
    Static,
    /// `amplitude * sin(2 pi n / period)` applied to ellipse `ellipse`.
    Sinusoid {
        ellipse: usize,
        amplitude: [f64; 2],
        period: f64,
    },
}

impl Motion {
    fn shift_for(&self, ellipse: usize, frame: usize) -> [f64; 2] {
        match *self {
            Motion::Sinusoid {
                ellipse: e,
                amplitude,
                period,
            } if e == ellipse => {
                let s = (2.0 * PI * frame as f64 / period).sin();
                [amplitude[0] * s, amplitude[1] * s]
            }
            _ => [0.0, 0.0],
        }
    }

    fn validate(&self) -> Result<()> {
        if let Motion::Sinusoid {
            amplitude, period, ..
        } = self
        {
            if !(amplitude[0].is_finite() && amplitude[1].is_finite() && period.is_finite()) {
                return Err(Error::config("motion parameters must be finite"));
            }
            if *period == 0.0 {
                return Err(Error::config("motion period must be non-zero"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSpec {
    pub ellipses: Vec<Ellipse>,
    pub motion: Motion,
    pub coils: usize,
    pub coil_model: CoilModel,
    /// Side length of the imaged field-of-view in pixels.
    pub fov: f64,
    /// Gaussian edge blur (pixels) applied as a k-space taper.
    pub edge_blur: f64,
    /// Standard deviation of additive complex noise per real component.
    pub noise_std: f64,
    pub seed: u64,
}

impl PhantomSpec {
    /// Single centred disk of unit amplitude, one uniform coil.
    pub fn disk(fov: f64, radius: f64) -> Self {
        Self {
            ellipses: vec![Ellipse {
                center: [0.0, 0.0],
                axes: [radius, radius],
                angle: 0.0,
                amplitude: Complex64::new(1.0, 0.0),
            }],
            motion: Motion::Static,
            coils: 1,
            coil_model: CoilModel::Uniform,
            fov,
            edge_blur: 0.0,
            noise_std: 0.0,
            seed: 0,
        }
    }

    /// Modified Shepp-Logan head scaled to 90% of an `fov`-pixel image.
    pub fn shepp_logan(fov: f64) -> Self {
        #[rustfmt::skip]
        const TABLE: [[f64; 6]; 10] = [
            // amplitude, a, b, x0, y0, angle(deg)
            [ 1.0,  0.69,   0.92,    0.0,   0.0,     0.0],
            [-0.8,  0.6624, 0.8740,  0.0,  -0.0184,  0.0],
            [-0.2,  0.1100, 0.3100,  0.22,  0.0,   -18.0],
            [-0.2,  0.1600, 0.4100, -0.22,  0.0,    18.0],
            [ 0.1,  0.2100, 0.2500,  0.0,   0.35,    0.0],
            [ 0.1,  0.0460, 0.0460,  0.0,   0.1,     0.0],
            [ 0.1,  0.0460, 0.0460,  0.0,  -0.1,     0.0],
            [ 0.1,  0.0460, 0.0230, -0.08, -0.605,   0.0],
            [ 0.1,  0.0230, 0.0230,  0.0,  -0.606,   0.0],
            [ 0.1,  0.0230, 0.0460,  0.06, -0.605,   0.0],
        ];
        let scale = 0.45 * fov;
        let ellipses = TABLE
            .iter()
            .map(|r| Ellipse {
                center: [r[3] * scale, r[4] * scale],
                axes: [r[1] * scale, r[2] * scale],
                angle: r[5].to_radians(),
                amplitude: Complex64::new(r[0], 0.0),
            })
            .collect();
        Self {
            ellipses,
            motion: Motion::Static,
            coils: 1,
            coil_model: CoilModel::Uniform,
            fov,
            edge_blur: 1.5,
            noise_std: 0.0,
            seed: 0,
        }
    }

    /// Shepp-Logan with a ring of `coils` coils and one moving ellipse.
    pub fn dynamic_head(fov: f64, coils: usize) -> Self {
        Self {
            coils,
            coil_model: CoilModel::default(),
            motion: Motion::Sinusoid {
                ellipse: 4,
                amplitude: [0.0, 0.06 * fov],
                period: 20.0,
            },
            ..Self::shepp_logan(fov)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.coils == 0 {
            return Err(Error::config("phantom needs at least one coil"));
        }
        if !(self.fov.is_finite() && self.fov > 0.0) {
            return Err(Error::config("field-of-view must be positive"));
        }
        if !(self.edge_blur.is_finite() && self.edge_blur >= 0.0) {
            return Err(Error::config("edge blur must be finite and >= 0"));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::config("noise level must be finite and >= 0"));
        }
        for e in &self.ellipses {
            let finite = e.center.iter().chain(&e.axes).all(|v| v.is_finite())
                && e.angle.is_finite()
                && e.amplitude.re.is_finite()
                && e.amplitude.im.is_finite();
            if !finite {
                return Err(Error::config("ellipse parameters must be finite"));
            }
            if e.axes[0] <= 0.0 || e.axes[1] <= 0.0 {
                return Err(Error::config("ellipse axes must be positive"));
            }
        }
        if let Motion::Sinusoid { ellipse, .. } = self.motion {
            if ellipse >= self.ellipses.len() && !self.ellipses.is_empty() {
                return Err(Error::config(format!("motion refers to missing ellipse {ellipse}")));
            }
        }
        self.motion.validate()
    }

    /// Spectrum of the (displaced, blurred) object at `k`, no coils.
    pub fn object_spectrum(&self, frame: usize, k: [f64; 2]) -> Complex64 {
        let taper = if self.edge_blur > 0.0 {
            (-2.0 * (PI * self.edge_blur).powi(2) * (k[0] * k[0] + k[1] * k[1])).exp()
        } else {
            1.0
        };
        let sum: Complex64 = self
            .ellipses
            .iter()
            .enumerate()
            .map(|(i, e)| e.spectrum(k, self.motion.shift_for(i, frame)))
            .sum();
        sum * taper
    }

    /// Spectrum of object times coil `j` at `k`.
    pub fn coil_spectrum(&self, frame: usize, j: usize, k: [f64; 2]) -> Complex64 {
        coil_harmonics(self, j)
            .iter()
            .map(|h| h.weight * self.object_spectrum(frame, [k[0] - h.freq[0], k[1] - h.freq[1]]))
            .sum()
    }

    /// Band-limited object image on a `size x size` pixel grid (origin at
    /// `size/2`), obtained by inverse DFT of the analytic spectrum sampled
    /// at `1/size` spacing. `size` must be even.
    pub fn object_image(&self, frame: usize, size: usize) -> Vec<Complex64> {
        assert!(size.is_multiple_of(2), "image size must be even");
        let half = (size / 2) as f64;
        let mut spec: Vec<C32> = (0..size * size)
            .map(|i| {
                let k = [
                    ((i % size) as f64 - half) / size as f64,
                    ((i / size) as f64 - half) / size as f64,
                ];
                let v = self.object_spectrum(frame, k);
                C32::new(v.re as f32, v.im as f32)
            })
            .collect();
        let fft = Fft2::new(size);
        let mut scratch = fft.make_scratch();
        fft.inverse_centered(&mut spec, &mut scratch, FftUse::Other);
        let norm = 1.0 / (size * size) as f64;
        spec.iter()
            .map(|v| Complex64::new(v.re as f64 * norm, v.im as f64 * norm))
            .collect()
    }

    /// Point-wise indicator rendering (no band limit), for masks.
    pub fn support(&self, frame: usize, size: usize) -> Vec<bool> {
        let half = (size / 2) as f64;
        (0..size * size)
            .map(|i| {
                let p = [(i % size) as f64 - half, (i / size) as f64 - half];
                self.ellipses
                    .iter()
                    .enumerate()
                    .any(|(e, el)| el.contains(p, self.motion.shift_for(e, frame)))
            })
            .collect()
    }
}

/// Simulated radial frame `n` of slice 0.
pub fn simulate_frame(
    phantom: &PhantomSpec,
    spec: &TrajectorySpec,
    frame: usize,
) -> Result<KSpaceFrame> {
    simulate_slice(phantom, spec, frame, 0)
}

pub fn simulate_slice(
    phantom: &PhantomSpec,
    spec: &TrajectorySpec,
    frame: usize,
    slice: usize,
) -> Result<KSpaceFrame> {
    phantom.validate()?;
    spec.validate()?;
    let angles = spec.frame_angles(frame);
    let coords = super::radial_coords(&angles, spec.samples_per_spoke);
    let mut out = KSpaceFrame::zeros(
        frame,
        slice,
        phantom.coils,
        angles,
        spec.samples_per_spoke,
    );
    let per_channel = out.samples_per_channel();
    out.samples
        .par_chunks_mut(per_channel)
        .enumerate()
        .for_each(|(j, chan)| {
            for (v, k) in chan.iter_mut().zip(&coords) {
                let s = phantom.coil_spectrum(frame, j, *k);
                *v = C32::new(s.re as f32, s.im as f32);
            }
        });
    if phantom.noise_std > 0.0 {
        let seed = phantom
            .seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add((frame as u64) << 20)
            .wrapping_add(slice as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, phantom.noise_std).expect("finite noise level");
        for v in out.samples.iter_mut() {
            v.re += normal.sample(&mut rng) as f32;
            v.im += normal.sample(&mut rng) as f32;
        }
    }
    Ok(out)
}
