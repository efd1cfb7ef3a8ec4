//! Kaiser-Bessel gridding on a twofold oversampled grid.
//!
//! A sample at `k` (cycles per pixel) sits at grid position
//! `u = k G + G/2`; it is spread onto the `KB_WIDTH` nearest cells per axis
//! (periodically wrapped). After the inverse FFT the kernel's Fourier
//! transform is divided out and the result masked to the field-of-view.

use crate::fft::{Fft2, FftUse};
use crate::{Error, Result, C32};

/// Kernel support in grid cells.
pub const KB_WIDTH: usize = 4;

/// Modified Bessel function of the first kind, order zero.
pub fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn kb_beta(width: f64, oversampling: f64) -> f64 {
    let a = oversampling;
    std::f64::consts::PI * ((width / a).powi(2) * (a - 0.5).powi(2) - 0.8).sqrt()
}

/// Interpolation weights of one sample along one axis.
#[derive(Clone, Copy, Debug)]
struct Taps {
    first: isize,
    w: [f32; KB_WIDTH],
}

#[derive(Clone, Debug)]
pub struct Gridder {
    g: usize,
    beta: f64,
    x_taps: Vec<Taps>,
    y_taps: Vec<Taps>,
    /// `1 / kernel-FT` inside the field-of-view, zero outside.
    deapod: Vec<f32>,
}

impl Gridder {
    pub fn new(coords: &[[f64; 2]], g: usize) -> Result<Self> {
        if g < 4 || !g.is_multiple_of(2) {
            return Err(Error::config(format!("grid side {g} must be even and >= 4")));
        }
        let width = KB_WIDTH as f64;
        let beta = kb_beta(width, 2.0);
        let kernel = |t: f64| {
            let x = 2.0 * t / width;
            if x.abs() >= 1.0 {
                0.0
            } else {
                bessel_i0(beta * (1.0 - x * x).sqrt())
            }
        };
        let taps = |k: f64| {
            assert!(
                (-0.5..=0.5).contains(&k),
                "sample coordinate {k} outside [-0.5, 0.5]"
            );
            let u = k * g as f64 + (g / 2) as f64;
            let first = u.floor() as isize - (KB_WIDTH as isize / 2 - 1);
            let mut w = [0.0f32; KB_WIDTH];
            for (i, wi) in w.iter_mut().enumerate() {
                *wi = kernel(u - (first + i as isize) as f64) as f32;
            }
            Taps { first, w }
        };
        let x_taps = coords.iter().map(|k| taps(k[0])).collect();
        let y_taps = coords.iter().map(|k| taps(k[1])).collect();

        let l = g / 2;
        let lo = g / 2 - l / 2;
        let ft = |p: f64| {
            // continuous transform of the kernel at p / G cycles per cell
            let z = beta * beta - (std::f64::consts::PI * width * p / g as f64).powi(2);
            let s = z.sqrt();
            width * s.sinh() / s
        };
        let axis: Vec<f64> = (0..g)
            .map(|i| {
                if (lo..lo + l).contains(&i) {
                    1.0 / ft(i as f64 - (g / 2) as f64)
                } else {
                    0.0
                }
            })
            .collect();
        let deapod = (0..g * g)
            .map(|i| (axis[i / g] * axis[i % g]) as f32)
            .collect();
        Ok(Self {
            g,
            beta,
            x_taps,
            y_taps,
            deapod,
        })
    }

    pub fn grid_size(&self) -> usize {
        self.g
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn samples(&self) -> usize {
        self.x_taps.len()
    }

    fn wrap(&self, i: isize) -> usize {
        i.rem_euclid(self.g as isize) as usize
    }

    /// Spreads samples onto a `G x G` k-space grid (DC at `G/2`).
    pub fn spread(&self, samples: &[C32], grid: &mut [C32]) {
        assert_eq!(samples.len(), self.samples());
        assert_eq!(grid.len(), self.g * self.g);
        grid.fill(C32::default());
        for ((v, tx), ty) in samples.iter().zip(&self.x_taps).zip(&self.y_taps) {
            for (iy, wy) in ty.w.iter().enumerate() {
                let row = self.wrap(ty.first + iy as isize) * self.g;
                let vy = v * wy;
                for (ix, wx) in tx.w.iter().enumerate() {
                    grid[row + self.wrap(tx.first + ix as isize)] += vy * wx;
                }
            }
        }
    }

    /// Interpolates a k-space grid at the sample positions; adjoint of
    /// [`Gridder::spread`].
    pub fn interp(&self, grid: &[C32], samples: &mut [C32]) {
        assert_eq!(samples.len(), self.samples());
        assert_eq!(grid.len(), self.g * self.g);
        for ((v, tx), ty) in samples.iter_mut().zip(&self.x_taps).zip(&self.y_taps) {
            let mut acc = C32::default();
            for (iy, wy) in ty.w.iter().enumerate() {
                let row = self.wrap(ty.first + iy as isize) * self.g;
                let mut line = C32::default();
                for (ix, wx) in tx.w.iter().enumerate() {
                    line += grid[row + self.wrap(tx.first + ix as isize)] * wx;
                }
                acc += line * wy;
            }
            *v = acc;
        }
    }

    /// Image-domain `F^H y` on the field-of-view (zero outside).
    pub fn adjoint_into(&self, samples: &[C32], fft: &Fft2, out: &mut [C32]) {
        self.spread(samples, out);
        let mut scratch = fft.make_scratch();
        fft.inverse_centered(out, &mut scratch, FftUse::Other);
        for (v, d) in out.iter_mut().zip(&self.deapod) {
            *v *= d;
        }
    }

    pub fn adjoint(&self, samples: &[C32], fft: &Fft2) -> Vec<C32> {
        let mut out = vec![C32::default(); self.g * self.g];
        self.adjoint_into(samples, fft, &mut out);
        out
    }

    /// Approximate `F x` at the sample positions; the exact adjoint of
    /// [`Gridder::adjoint`].
    pub fn forward(&self, image: &[C32], fft: &Fft2) -> Vec<C32> {
        let mut grid: Vec<C32> = image.iter().zip(&self.deapod).map(|(v, d)| v * d).collect();
        let mut scratch = fft.make_scratch();
        fft.forward_centered(&mut grid, &mut scratch, FftUse::Other);
        let mut out = vec![C32::default(); self.samples()];
        self.interp(&grid, &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, n: usize) -> Vec<C32> {
        (0..n)
            .map(|_| C32::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect()
    }

    fn dot(a: &[C32], b: &[C32]) -> Complex64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| {
                let p = x.conj() * y;
                Complex64::new(p.re as f64, p.im as f64)
            })
            .sum()
    }

    #[test]
    fn i0_matches_reference_values() {
        assert_eq!(bessel_i0(0.0), 1.0);
        assert!((bessel_i0(1.0) - 1.266_065_877_752_008_4).abs() < 1e-14);
        assert!((bessel_i0(9.0) - 1_093.588_354_511_374_6).abs() / 1093.6 < 1e-13);
    }

    #[test]
    fn beta_for_width_four() {
        let g = Gridder::new(&[[0.0, 0.0]], 16).unwrap();
        assert!((g.beta() - 8.996).abs() < 1e-3);
    }

    #[test]
    fn unit_sample_at_dc_spreads_kernel_mass() {
        let gr = Gridder::new(&[[0.0, 0.0]], 16).unwrap();
        let mut grid = vec![C32::default(); 256];
        gr.spread(&[C32::new(1.0, 0.0)], &mut grid);
        let beta = gr.beta();
        let k = |t: f64| bessel_i0(beta * (1.0 - (t / 2.0).powi(2)).max(0.0).sqrt());
        let axis: f64 = [-1.0, 0.0, 1.0].iter().map(|t| k(*t)).sum();
        let total: f32 = grid.iter().map(|v| v.re).sum();
        assert!(((total as f64) - axis * axis).abs() / (axis * axis) < 1e-5);
        let nonzero: Vec<usize> = (0..256).filter(|i| grid[*i].re != 0.0).collect();
        assert_eq!(nonzero.len(), 9);
        assert!(nonzero.iter().all(|i| (7..=9).contains(&(i / 16)) && (7..=9).contains(&(i % 16))));
    }

    #[test]
    fn adjoint_pair_inner_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let coords: Vec<[f64; 2]> = (0..200)
            .map(|_| [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)])
            .collect();
        let gr = Gridder::new(&coords, 16).unwrap();
        let fft = Fft2::new(16);
        for _ in 0..20 {
            let y = random(&mut rng, 200);
            let x = random(&mut rng, 256);
            let lhs = dot(&gr.adjoint(&y, &fft), &x);
            let rhs = dot(&y, &gr.forward(&x, &fft));
            assert!((lhs - rhs).norm() / lhs.norm() < 1e-5, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn gridding_approximates_direct_sum() {
        // oracle: sum_k y_k exp(2 pi i k.r) evaluated directly
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = 32;
        let coords: Vec<[f64; 2]> = (0..300)
            .map(|_| [rng.random_range(-0.45..0.45), rng.random_range(-0.45..0.45)])
            .collect();
        let y = random(&mut rng, coords.len());
        let gr = Gridder::new(&coords, g).unwrap();
        let got = gr.adjoint(&y, &Fft2::new(g));
        let (mut err, mut norm) = (0.0, 0.0);
        for py in g / 4..3 * g / 4 {
            for px in g / 4..3 * g / 4 {
                let r = [px as f64 - (g / 2) as f64, py as f64 - (g / 2) as f64];
                let want: Complex64 = coords
                    .iter()
                    .zip(&y)
                    .map(|(k, v)| {
                        Complex64::new(v.re as f64, v.im as f64)
                            * Complex64::from_polar(
                                1.0,
                                2.0 * std::f64::consts::PI * (k[0] * r[0] + k[1] * r[1]),
                            )
                    })
                    .sum();
                let v = got[py * g + px];
                err += (Complex64::new(v.re as f64, v.im as f64) - want).norm_sqr();
                norm += want.norm_sqr();
            }
        }
        assert!((err / norm).sqrt() < 1e-2, "relative error {}", (err / norm).sqrt());
        assert_eq!(got[0], C32::default());
    }

    #[test]
    fn gridding_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let coords: Vec<[f64; 2]> = (0..50)
            .map(|_| [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)])
            .collect();
        let gr = Gridder::new(&coords, 16).unwrap();
        let fft = Fft2::new(16);
        let x = random(&mut rng, 50);
        let y = random(&mut rng, 50);
        let a = C32::new(0.7, -1.3);
        let combo: Vec<C32> = x.iter().zip(&y).map(|(u, v)| a * u + v).collect();
        let lhs = gr.adjoint(&combo, &fft);
        let fx = gr.adjoint(&x, &fft);
        let fy = gr.adjoint(&y, &fft);
        let scale: f32 = lhs.iter().map(|v| v.norm()).fold(0.0, f32::max);
        for i in 0..256 {
            assert!((lhs[i] - (a * fx[i] + fy[i])).norm() <= 1e-5 * scale);
        }
    }
}
