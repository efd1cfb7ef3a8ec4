//! Weighting, forward-model derivative and its adjoint, all in the
//! gridded image domain.
//!
//! Per channel the normal operator costs four 2D FFTs: one inverse
//! transform inside `W^{-1}`, the FFT/iFFT pair of the Toeplitz product
//! and one forward transform inside `W^{-H}`.

use std::sync::Arc;

use crate::decomp::channels::all_reduce_sum_into;
use crate::decomp::WorkerGroup;
use crate::fft::{Fft2, FftCounter, FftUse};
use crate::planner::{pad_k_into, ReconPlan};
use crate::preproc::{fov_mask, GriddedData, PsfKernel};
use crate::{Error, Result, C32};

use super::Estimate;

/// Geometry and transforms shared by every frame of a reconstruction.
#[derive(Clone, Debug)]
pub struct NlinvOp {
    g: usize,
    gc: usize,
    fft: Fft2,
    inv_w: Vec<f32>,
    mask: Vec<f32>,
    /// `1/G`, making `W^{-1}` a unitary transform up to the weights.
    unit: f32,
}

/// Per-channel buffers.
#[derive(Clone, Debug)]
struct ChannelWork {
    /// Decoded coil `c_j = W^{-1} c^_j` at the current Newton iterate.
    c: Vec<C32>,
    contrib: Vec<C32>,
    buf: Vec<C32>,
    scratch: Vec<C32>,
}

/// Decoded state of one Newton iterate: `rho` and all `c_j`.
#[derive(Clone, Debug)]
pub struct StepCache {
    rho: Vec<C32>,
    work: Vec<ChannelWork>,
}

impl StepCache {
    pub fn rho(&self) -> &[C32] {
        &self.rho
    }

    pub fn coil_image(&self, j: usize) -> &[C32] {
        &self.work[j].c
    }

    pub fn channels(&self) -> usize {
        self.work.len()
    }
}

impl NlinvOp {
    pub fn new(plan: &ReconPlan) -> Self {
        Self::with_counter(plan, None)
    }

    pub fn with_counter(plan: &ReconPlan, counter: Option<Arc<FftCounter>>) -> Self {
        let mut fft = Fft2::new(plan.g);
        if let Some(c) = counter {
            fft = fft.with_counter(c);
        }
        Self {
            g: plan.g,
            gc: plan.gc,
            fft,
            inv_w: plan.weights.inverse_weights(plan.g, plan.gc),
            mask: fov_mask(plan.g)
                .into_iter()
                .map(|m| if m { 1.0 } else { 0.0 })
                .collect(),
            unit: 1.0 / plan.g as f32,
        }
    }

    pub fn grid(&self) -> usize {
        self.g
    }

    pub fn coil_grid(&self) -> usize {
        self.gc
    }

    pub fn counter(&self) -> Option<&Arc<FftCounter>> {
        self.fft.counter()
    }

    fn new_work(&self) -> ChannelWork {
        let n = self.g * self.g;
        ChannelWork {
            c: vec![C32::default(); n],
            contrib: vec![C32::default(); n],
            buf: vec![C32::default(); n],
            scratch: self.fft.make_scratch(),
        }
    }

    /// `c = iFFT(pad(c^ / w)) / G`.
    pub fn w_inv_into(&self, chat: &[C32], out: &mut [C32], scratch: &mut Vec<C32>, usage: FftUse) {
        let weighted: Vec<C32> = chat.iter().zip(&self.inv_w).map(|(v, w)| v * w).collect();
        pad_k_into(&weighted, self.gc, self.g, out);
        self.fft.inverse_centered(out, scratch, usage);
        for v in out.iter_mut() {
            *v *= self.unit;
        }
    }

    /// `crop(FFT(v)) / (G w)`; overwrites `v`.
    pub fn w_inv_h_into(&self, v: &mut [C32], out: &mut [C32], scratch: &mut Vec<C32>, usage: FftUse) {
        self.fft.forward_centered(v, scratch, usage);
        let off = self.g / 2 - self.gc / 2;
        for y in 0..self.gc {
            let src = &v[(y + off) * self.g + off..(y + off) * self.g + off + self.gc];
            let dst = &mut out[y * self.gc..(y + 1) * self.gc];
            let w = &self.inv_w[y * self.gc..(y + 1) * self.gc];
            for ((d, s), wi) in dst.iter_mut().zip(src).zip(w) {
                *d = s * (wi * self.unit);
            }
        }
    }

    pub fn apply_w_inv(&self, chat: &[C32]) -> Vec<C32> {
        let mut out = vec![C32::default(); self.g * self.g];
        let mut scratch = self.fft.make_scratch();
        self.w_inv_into(chat, &mut out, &mut scratch, FftUse::Other);
        out
    }

    pub fn apply_w_inv_h(&self, v: &[C32]) -> Vec<C32> {
        let mut buf = v.to_vec();
        let mut out = vec![C32::default(); self.gc * self.gc];
        let mut scratch = self.fft.make_scratch();
        self.w_inv_h_into(&mut buf, &mut out, &mut scratch, FftUse::Other);
        out
    }

    /// `mask . iFFT(P . FFT(mask . buf))`, in place.
    fn toeplitz(&self, buf: &mut [C32], psf: &PsfKernel, scratch: &mut Vec<C32>, usage: FftUse) {
        for (v, m) in buf.iter_mut().zip(&self.mask) {
            *v *= m;
        }
        self.fft.forward(buf, scratch, usage);
        for (v, p) in buf.iter_mut().zip(&psf.p) {
            *v *= p;
        }
        self.fft.inverse(buf, scratch, usage);
        for (v, m) in buf.iter_mut().zip(&self.mask) {
            *v *= m;
        }
    }

    fn check(&self, x: &Estimate, psf: &PsfKernel) {
        assert_eq!(x.g, self.g, "estimate grid mismatch");
        assert_eq!(x.gc, self.gc, "estimate coil grid mismatch");
        assert_eq!(psf.g, self.g, "psf grid mismatch");
    }

    /// Decodes the coils of `x` for use by the normal operator.
    pub fn prepare(&self, x: &Estimate, group: &WorkerGroup) -> StepCache {
        self.prepare_with(x, group, FftUse::Setup)
    }

    pub fn prepare_with(&self, x: &Estimate, group: &WorkerGroup, usage: FftUse) -> StepCache {
        assert_eq!(x.g, self.g);
        let mut work: Vec<ChannelWork> = (0..x.channels).map(|_| self.new_work()).collect();
        group.for_each_channel(&mut work, |j, w| {
            self.w_inv_into(x.coil(j), &mut w.c, &mut w.scratch, usage);
        });
        StepCache {
            rho: x.rho.clone(),
            work,
        }
    }

    /// `DF^H (z - F^H F(rho c))` at the cached iterate. Returns the
    /// gradient and the squared gridded residual norm.
    pub fn residual_gradient(
        &self,
        cache: &mut StepCache,
        z: &GriddedData,
        psf: &PsfKernel,
        group: &WorkerGroup,
    ) -> Result<(Estimate, f64)> {
        let channels = cache.work.len();
        if z.channels != channels || z.g != self.g {
            return Err(Error::config(format!(
                "gridded data has {} channels on {}^2, estimate has {} on {}^2",
                z.channels, z.g, channels, self.g
            )));
        }
        let mut out = Estimate::zeros(self.g, self.gc, channels);
        let rho = &cache.rho;
        let mut norms = vec![0.0f64; channels];
        {
            let mut items: Vec<_> = cache
                .work
                .iter_mut()
                .zip(out.coils.chunks_mut(self.gc * self.gc))
                .zip(norms.iter_mut())
                .collect();
            group.for_each_channel(&mut items, |j, ((w, coil_out), norm)| {
                for ((b, r), c) in w.buf.iter_mut().zip(rho).zip(&w.c) {
                    *b = r * c;
                }
                self.toeplitz(&mut w.buf, psf, &mut w.scratch, FftUse::Setup);
                for (b, zj) in w.buf.iter_mut().zip(z.channel(j)) {
                    *b = zj - *b;
                }
                **norm = w.buf.iter().map(|v| v.norm_sqr() as f64).sum();
                for ((d, b), c) in w.contrib.iter_mut().zip(&w.buf).zip(&w.c) {
                    *d = c.conj() * b;
                }
                for (b, r) in w.buf.iter_mut().zip(rho) {
                    *b *= r.conj();
                }
                self.w_inv_h_into(&mut w.buf, coil_out, &mut w.scratch, FftUse::Setup);
            });
        }
        self.reduce_rho(cache, &mut out.rho)?;
        Ok((out, norms.iter().sum()))
    }

    /// `DF^H DF dx` at the cached iterate, written to `out`.
    pub fn apply_normal_into(
        &self,
        dx: &Estimate,
        cache: &mut StepCache,
        psf: &PsfKernel,
        group: &WorkerGroup,
        out: &mut Estimate,
    ) -> Result<()> {
        self.check(dx, psf);
        assert!(dx.same_shape(out), "output shape mismatch");
        let rho = &cache.rho;
        {
            let mut items: Vec<_> = cache
                .work
                .iter_mut()
                .zip(out.coils.chunks_mut(self.gc * self.gc))
                .collect();
            group.for_each_channel(&mut items, |j, (w, coil_out)| {
                self.w_inv_into(dx.coil(j), &mut w.buf, &mut w.scratch, FftUse::Normal);
                for (((b, r), c), d) in w.buf.iter_mut().zip(rho).zip(&w.c).zip(&dx.rho) {
                    *b = c * d + r * *b;
                }
                self.toeplitz(&mut w.buf, psf, &mut w.scratch, FftUse::Normal);
                for ((d, b), c) in w.contrib.iter_mut().zip(&w.buf).zip(&w.c) {
                    *d = c.conj() * b;
                }
                for (b, r) in w.buf.iter_mut().zip(rho) {
                    *b *= r.conj();
                }
                self.w_inv_h_into(&mut w.buf, coil_out, &mut w.scratch, FftUse::Normal);
            });
        }
        self.reduce_rho(cache, &mut out.rho)
    }

    pub fn apply_normal(
        &self,
        dx: &Estimate,
        cache: &mut StepCache,
        psf: &PsfKernel,
        group: &WorkerGroup,
    ) -> Result<Estimate> {
        let mut out = Estimate::zeros(dx.g, dx.gc, dx.channels);
        self.apply_normal_into(dx, cache, psf, group, &mut out)?;
        Ok(out)
    }

    /// `sum_j conj(c_j) t_j` over all channels in channel order.
    fn reduce_rho(&self, cache: &StepCache, rho_out: &mut [C32]) -> Result<()> {
        rho_out.fill(C32::default());
        let partials: Vec<&[C32]> = cache.work.iter().map(|w| w.contrib.as_slice()).collect();
        all_reduce_sum_into(&partials, rho_out)
    }

    /// Forward model `F^H F(rho c_j)` per channel, for data-fit checks.
    pub fn model_data(&self, cache: &mut StepCache, psf: &PsfKernel) -> Vec<Vec<C32>> {
        let rho = cache.rho.clone();
        cache
            .work
            .iter_mut()
            .map(|w| {
                let mut b: Vec<C32> = rho.iter().zip(&w.c).map(|(r, c)| r * c).collect();
                self.toeplitz(&mut b, psf, &mut w.scratch, FftUse::Other);
                b
            })
            .collect()
    }

    /// Output image on the `n x n` centre: `rho * sqrt(sum_j |c_j|^2)`.
    pub fn image(&self, cache: &StepCache, n: usize) -> Vec<C32> {
        let g = self.g;
        let off = g / 2 - n / 2;
        let mut out = Vec::with_capacity(n * n);
        for y in off..off + n {
            for x in off..off + n {
                let i = y * g + x;
                let rss: f32 = cache.work.iter().map(|w| w.c[i].norm_sqr()).sum::<f32>().sqrt();
                out.push(cache.rho[i] * rss);
            }
        }
        out
    }
}
