//! Point-spread kernels for the Toeplitz form of `F^H D F`.
//!
//! For image-domain inputs supported on the field-of-view, `F^H D F` is a
//! convolution with `psf(d) = sum_k D_k exp(2 pi i k.d)`. Offsets between
//! two field-of-view pixels stay below `G/2`, so the convolution is exactly
//! a circular one on the `G`-grid and diagonalizes under the FFT:
//! `F^H D F x = mask . iFFT(P . FFT(mask . x))` with `P = FFT(psf) / G^2`.
//! The kernel is evaluated by direct summation, so it carries no
//! interpolation error.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::fs;
use std::hash::{Hash, Hasher};
use std::io::{Read, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;

use super::{fov_mask, radial_dcf};
use crate::fft::{Fft2, FftUse};
use crate::planner::ReconPlan;
use crate::seqsim::radial_coords;
use crate::{Error, Result, C32};

const SIDECAR_MAGIC: &[u8; 4] = b"PSF1";

#[derive(Clone, Debug, PartialEq)]
pub struct PsfKernel {
    pub g: usize,
    /// Fourier-domain kernel in plain (uncentred) FFT order.
    pub p: Vec<C32>,
}

impl PsfKernel {
    /// Kernel for arbitrary sample positions and weights.
    pub fn from_samples(coords: &[[f64; 2]], weights: &[f64], g: usize) -> Result<Self> {
        if coords.len() != weights.len() {
            return Err(Error::config("one weight per sample required"));
        }
        if g < 2 || !g.is_multiple_of(2) {
            return Err(Error::config(format!("grid side {g} must be even")));
        }
        use std::f64::consts::PI;
        // offset d stored at index d mod G
        let offset = |i: usize| if i < g / 2 { i as f64 } else { i as f64 - g as f64 };
        // The Nyquist offset -G/2 is its own mirror; averaging it with +G/2
        // keeps P real. FOV-limited inputs never reach it.
        let phasor = |k: f64, i: usize| {
            let (s, c) = (2.0 * PI * k * offset(i)).sin_cos();
            if i == g / 2 {
                (c, 0.0)
            } else {
                (c, s)
            }
        };
        let ex: Vec<Vec<(f64, f64)>> = coords
            .iter()
            .map(|k| (0..g).map(|i| phasor(k[0], i)).collect())
            .collect();
        let mut psf = vec![C32::default(); g * g];
        psf.par_chunks_mut(g).enumerate().for_each(|(iy, row)| {
            let mut acc = vec![(0.0f64, 0.0f64); g];
            for ((k, w), exk) in coords.iter().zip(weights).zip(&ex) {
                if *w == 0.0 {
                    continue;
                }
                let (c, s) = phasor(k[1], iy);
                let (ar, ai) = (w * c, w * s);
                for (a, (er, ei)) in acc.iter_mut().zip(exk) {
                    a.0 += ar * er - ai * ei;
                    a.1 += ar * ei + ai * er;
                }
            }
            for (v, a) in row.iter_mut().zip(&acc) {
                *v = C32::new(a.0 as f32, a.1 as f32);
            }
        });
        let fft = Fft2::new(g);
        let mut scratch = fft.make_scratch();
        fft.forward(&mut psf, &mut scratch, FftUse::Other);
        let norm = 1.0 / (g * g) as f32;
        for v in &mut psf {
            *v *= norm;
        }
        Ok(Self { g, p: psf })
    }

    /// `mask . iFFT(P . FFT(mask . x))`, for checks outside the solver.
    pub fn apply(&self, x: &[C32]) -> Vec<C32> {
        let g = self.g;
        let mask = fov_mask(g);
        let mut buf: Vec<C32> = x
            .iter()
            .zip(&mask)
            .map(|(v, m)| if *m { *v } else { C32::default() })
            .collect();
        let fft = Fft2::new(g);
        let mut scratch = fft.make_scratch();
        fft.forward(&mut buf, &mut scratch, FftUse::Other);
        for (v, p) in buf.iter_mut().zip(&self.p) {
            *v *= p;
        }
        fft.inverse(&mut buf, &mut scratch, FftUse::Other);
        for (v, m) in buf.iter_mut().zip(&mask) {
            if !m {
                *v = C32::default();
            }
        }
        buf
    }

    /// Largest `|P(k) - conj(P(-k))|` relative to `max |P|`.
    pub fn hermitian_defect(&self) -> f32 {
        let g = self.g;
        let scale = self.p.iter().map(|v| v.norm()).fold(0.0f32, f32::max);
        let mut worst = 0.0f32;
        for y in 0..g {
            for x in 0..g {
                let a = self.p[y * g + x];
                let b = self.p[((g - y) % g) * g + (g - x) % g];
                worst = worst.max((a - b.conj()).norm());
            }
        }
        if scale > 0.0 {
            worst / scale
        } else {
            0.0
        }
    }

    fn write_to<W: Write>(&self, key: u64, out: &mut W) -> Result<()> {
        out.write_all(SIDECAR_MAGIC)?;
        out.write_all(&key.to_le_bytes())?;
        out.write_all(&(self.g as u64).to_le_bytes())?;
        for v in &self.p {
            out.write_all(&v.re.to_le_bytes())?;
            out.write_all(&v.im.to_le_bytes())?;
        }
        Ok(())
    }

    fn read_from<R: Read>(input: &mut R) -> Result<(u64, Self)> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != SIDECAR_MAGIC {
            return Err(Error::format("not a PSF sidecar"));
        }
        let mut word = [0u8; 8];
        input.read_exact(&mut word)?;
        let key = u64::from_le_bytes(word);
        input.read_exact(&mut word)?;
        let g = u64::from_le_bytes(word) as usize;
        if g == 0 || g > 1 << 14 {
            return Err(Error::format(format!("implausible PSF grid side {g}")));
        }
        let mut raw = vec![0u8; g * g * 8];
        input.read_exact(&mut raw)?;
        let p = raw
            .chunks_exact(8)
            .map(|c| {
                C32::new(
                    f32::from_le_bytes(c[0..4].try_into().unwrap()),
                    f32::from_le_bytes(c[4..8].try_into().unwrap()),
                )
            })
            .collect();
        Ok((key, Self { g, p }))
    }
}

/// Hash of a frame's spoke angles (bit patterns), used as cache key.
pub fn angles_key(angles: &[f64]) -> u64 {
    let mut h = DefaultHasher::new();
    for a in angles {
        a.to_bits().hash(&mut h);
    }
    h.finish()
}

/// Kernel of one radial frame with the radial density compensation used
/// by the gridder.
pub fn build_psf(angles: &[f64], samples_per_spoke: usize, plan: &ReconPlan) -> Result<PsfKernel> {
    if plan.g < 2 * plan.n {
        return Err(Error::config("grid must be at least twofold oversampled"));
    }
    let coords = radial_coords(angles, samples_per_spoke);
    let weights = radial_dcf(angles.len(), samples_per_spoke);
    PsfKernel::from_samples(&coords, &weights, plan.g)
}

/// Kernels keyed by `(angles hash, G)`. Frames `n` and `n + U` share
/// their angle set and hence their kernel.
#[derive(Debug, Default)]
pub struct PsfCache {
    entries: Mutex<HashMap<(u64, usize), Arc<PsfKernel>>>,
}

impl PsfCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("psf cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get_or_build(
        &self,
        angles: &[f64],
        samples_per_spoke: usize,
        plan: &ReconPlan,
    ) -> Result<Arc<PsfKernel>> {
        let key = (angles_key(angles), plan.g);
        if let Some(k) = self.entries.lock().expect("psf cache poisoned").get(&key) {
            return Ok(k.clone());
        }
        let kernel = Arc::new(build_psf(angles, samples_per_spoke, plan)?);
        Ok(self
            .entries
            .lock()
            .expect("psf cache poisoned")
            .entry(key)
            .or_insert(kernel)
            .clone())
    }

    /// Writes every cached kernel to a binary sidecar.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let entries = self.entries.lock().expect("psf cache poisoned");
        let mut out = std::io::BufWriter::new(fs::File::create(path)?);
        let mut keys: Vec<_> = entries.keys().copied().collect();
        keys.sort_unstable();
        for key in keys {
            entries[&key].write_to(key.0, &mut out)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut input = std::io::BufReader::new(fs::File::open(path)?);
        let cache = Self::new();
        loop {
            let mut probe = [0u8; 1];
            if input.read(&mut probe)? == 0 {
                break;
            }
            let mut chained = probe.as_slice().chain(&mut input);
            let (key, kernel) = PsfKernel::read_from(&mut chained)?;
            cache
                .entries
                .lock()
                .expect("psf cache poisoned")
                .insert((key, kernel.g), Arc::new(kernel));
        }
        Ok(cache)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqsim::TrajectorySpec;

    #[test]
    fn full_cartesian_sampling_is_identity_on_fov() {
        let l = 8usize;
        let g = 2 * l;
        let mut coords = Vec::new();
        for b in 0..l {
            for a in 0..l {
                coords.push([
                    (a as f64 - (l / 2) as f64) / l as f64,
                    (b as f64 - (l / 2) as f64) / l as f64,
                ]);
            }
        }
        let w = vec![1.0 / (l * l) as f64; coords.len()];
        let psf = PsfKernel::from_samples(&coords, &w, g).unwrap();
        let x: Vec<C32> = (0..g * g)
            .map(|i| C32::new((i % 7) as f32 - 3.0, (i % 5) as f32))
            .collect();
        let y = psf.apply(&x);
        let mask = fov_mask(g);
        for i in 0..g * g {
            let want = if mask[i] { x[i] } else { C32::default() };
            assert!((y[i] - want).norm() < 1e-4, "pixel {i}: {} vs {want}", y[i]);
        }
    }

    #[test]
    fn kernel_is_real_and_symmetric() {
        let plan = ReconPlan::with_grid(8, 16).unwrap();
        for k in [1usize, 5] {
            let angles = TrajectorySpec::new(k, 3, 16).frame_angles(1);
            let psf = build_psf(&angles, 16, &plan).unwrap();
            assert!(psf.hermitian_defect() < 1e-6);
            let peak = psf.p.iter().map(|v| v.norm()).fold(0.0, f32::max);
            assert!(psf.p.iter().all(|v| v.im.abs() <= 1e-5 * peak));
        }
    }

    #[test]
    fn frames_one_cycle_apart_share_kernel() {
        let plan = ReconPlan::with_grid(8, 16).unwrap();
        let t = TrajectorySpec::new(3, 5, 16);
        let cache = PsfCache::new();
        let a = cache.get_or_build(&t.frame_angles(0), 16, &plan).unwrap();
        let b = cache.get_or_build(&t.frame_angles(5), 16, &plan).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        assert_eq!(cache.len(), 1);
        cache.get_or_build(&t.frame_angles(1), 16, &plan).unwrap();
        assert_eq!(cache.len(), 2);
    }

    #[test]
    fn sidecar_round_trip() {
        let plan = ReconPlan::with_grid(8, 16).unwrap();
        let t = TrajectorySpec::new(3, 2, 16);
        let cache = PsfCache::new();
        for n in 0..2 {
            cache.get_or_build(&t.frame_angles(n), 16, &plan).unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("psf.bin");
        cache.save(&path).unwrap();
        let back = PsfCache::load(&path).unwrap();
        assert_eq!(back.len(), 2);
        let k = back.get_or_build(&t.frame_angles(1), 16, &plan).unwrap();
        assert_eq!(*k, *cache.get_or_build(&t.frame_angles(1), 16, &plan).unwrap());
    }
}
