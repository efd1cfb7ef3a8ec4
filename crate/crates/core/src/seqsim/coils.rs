//! Receive-coil sensitivity model.
//!
//! A coil is a Gaussian bump centred on a ring around the field-of-view,
//! represented by its truncated Fourier series over a period of twice the
//! field-of-view. Keeping only a few low-order harmonics makes the profile
//! smooth and lets the simulator apply it exactly in k-space: multiplying
//! the image by `exp(2 pi i f.r)` shifts its spectrum by `f`.

use std::f64::consts::PI;

use num_complex::Complex64;

use super::PhantomSpec;

#[derive(Clone, Debug, PartialEq)]
pub enum CoilModel {
    /// `c_j = 1` everywhere.
    Uniform,
    /// Gaussian bumps on a ring, `J` coils evenly spaced in angle with a
    /// matching phase offset (quadrature-style layout).
    Ring {
        /// Ring radius as a fraction of half the field-of-view.
        radius: f64,
        /// Gaussian standard deviation as a fraction of the field-of-view.
        width: f64,
        /// Harmonics kept per axis are `-harmonics..=harmonics`.
        harmonics: usize,
    },
}

impl Default for CoilModel {
    fn default() -> Self {
        CoilModel::Ring {
            radius: 1.0,
            width: 0.4,
            harmonics: 2,
        }
    }
}

/// One harmonic of a coil profile: `weight * exp(2 pi i freq.r)`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Harmonic {
    pub freq: [f64; 2],
    pub weight: Complex64,
}

pub(crate) fn coil_harmonics(phantom: &PhantomSpec, j: usize) -> Vec<Harmonic> {
    match phantom.coil_model {
        CoilModel::Uniform => vec![Harmonic {
            freq: [0.0, 0.0],
            weight: Complex64::new(1.0, 0.0),
        }],
        CoilModel::Ring {
            radius,
            width,
            harmonics,
        } => {
            let fov = phantom.fov;
            let period = 2.0 * fov;
            let sigma = width * fov;
            let phi = 2.0 * PI * j as f64 / phantom.coils as f64;
            let centre = [
                radius * fov / 2.0 * phi.cos(),
                radius * fov / 2.0 * phi.sin(),
            ];
            let h = harmonics as i64;
            let g = |m: i64| (-2.0 * (PI * sigma * m as f64 / period).powi(2)).exp();
            let norm: f64 = (-h..=h).map(g).sum::<f64>().powi(2);
            let phase = Complex64::from_polar(1.0, phi);
            let mut out = Vec::with_capacity(((2 * h + 1) * (2 * h + 1)) as usize);
            for my in -h..=h {
                for mx in -h..=h {
                    let freq = [mx as f64 / period, my as f64 / period];
                    let shift = -2.0 * PI * (freq[0] * centre[0] + freq[1] * centre[1]);
                    out.push(Harmonic {
                        freq,
                        weight: phase * Complex64::from_polar(g(mx) * g(my) / norm, shift),
                    });
                }
            }
            out
        }
    }
}

/// Sensitivity of coil `j` at `pixel` (pixels from the image centre).
pub fn coil_sensitivity(phantom: &PhantomSpec, j: usize, pixel: [f64; 2]) -> Complex64 {
    assert!(j < phantom.coils, "coil {j} out of range");
    coil_harmonics(phantom, j)
        .iter()
        .map(|h| {
            h.weight
                * Complex64::from_polar(
                    1.0,
                    2.0 * PI * (h.freq[0] * pixel[0] + h.freq[1] * pixel[1]),
                )
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ring_phantom(coils: usize, fov: f64) -> PhantomSpec {
        PhantomSpec {
            coils,
            coil_model: CoilModel::default(),
            ..PhantomSpec::disk(fov, fov / 4.0)
        }
    }

    #[test]
    fn uniform_model_is_one() {
        let p = PhantomSpec::disk(32.0, 8.0);
        for pix in [[0.0, 0.0], [10.0, -3.0], [-15.5, 15.5]] {
            let c = coil_sensitivity(&p, 0, pix);
            assert!((c - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn magnitude_peaks_at_coil_centre() {
        let fov = 64.0;
        let p = ring_phantom(4, fov);
        for j in 0..4 {
            let phi = 2.0 * PI * j as f64 / 4.0;
            let centre = [fov / 2.0 * phi.cos(), fov / 2.0 * phi.sin()];
            let peak = coil_sensitivity(&p, j, centre).norm();
            assert!((peak - 1.0).abs() < 1e-12);
            let half = fov / 2.0;
            let mut y = -half;
            while y < half {
                let mut x = -half;
                while x < half {
                    assert!(coil_sensitivity(&p, j, [x, y]).norm() <= peak + 1e-12);
                    x += 1.0;
                }
                y += 1.0;
            }
        }
    }

    #[test]
    fn quadrature_rss_flat_over_central_half() {
        // oracle: evaluate the model on the pixel grid
        let fov = 64.0;
        let p = ring_phantom(4, fov);
        let mut lo = f64::MAX;
        let mut hi = 0.0f64;
        let quarter = fov / 4.0;
        let mut y = -quarter;
        while y < quarter {
            let mut x = -quarter;
            while x < quarter {
                let rss = (0..4)
                    .map(|j| coil_sensitivity(&p, j, [x, y]).norm_sqr())
                    .sum::<f64>()
                    .sqrt();
                lo = lo.min(rss);
                hi = hi.max(rss);
                x += 1.0;
            }
            y += 1.0;
        }
        assert!(lo > 0.0);
        assert!((hi - lo) / hi <= 0.10, "rss spread {lo}..{hi}");
    }
}
