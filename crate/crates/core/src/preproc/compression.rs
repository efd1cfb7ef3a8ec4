//! Channel compression to virtual coils by principal components.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::seqsim::KSpaceFrame;
use crate::{Error, Result, C32};

/// Rows map physical channels onto virtual ones: `v_i = sum_j M_ij p_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct CompressionMatrix {
    pub virtual_channels: usize,
    pub physical_channels: usize,
    /// `[virtual][physical]`, row-major.
    pub matrix: Vec<Complex64>,
    /// Fraction of calibration energy captured by the kept components.
    pub energy_fraction: f64,
}

impl CompressionMatrix {
    pub fn identity(channels: usize) -> Self {
        let mut matrix = vec![Complex64::default(); channels * channels];
        for i in 0..channels {
            matrix[i * channels + i] = Complex64::new(1.0, 0.0);
        }
        Self {
            virtual_channels: channels,
            physical_channels: channels,
            matrix,
            energy_fraction: 1.0,
        }
    }

    pub fn get(&self, v: usize, p: usize) -> Complex64 {
        self.matrix[v * self.physical_channels + p]
    }

    /// Largest deviation of `M M^H` from the identity over the non-zero rows.
    pub fn orthonormality_defect(&self) -> f64 {
        let (jv, jp) = (self.virtual_channels, self.physical_channels);
        let live: Vec<usize> = (0..jv)
            .filter(|&i| (0..jp).any(|p| self.get(i, p).norm() > 0.0))
            .collect();
        let mut worst = 0.0f64;
        for &a in &live {
            for &b in &live {
                let dot: Complex64 = (0..jp).map(|p| self.get(a, p) * self.get(b, p).conj()).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((dot - want).norm());
            }
        }
        worst
    }

    pub fn apply(&self, frame: &KSpaceFrame) -> Result<KSpaceFrame> {
        if frame.channels != self.physical_channels {
            return Err(Error::config(format!(
                "frame has {} channels, compression expects {}",
                frame.channels, self.physical_channels
            )));
        }
        let mut out = KSpaceFrame::zeros(
            frame.frame_index,
            frame.slice_id,
            self.virtual_channels,
            frame.spoke_angles.clone(),
            frame.samples_per_spoke,
        );
        let m = frame.samples_per_channel();
        for v in 0..self.virtual_channels {
            let dst = out.channel_mut(v);
            let mut acc = vec![Complex64::default(); m];
            for p in 0..self.physical_channels {
                let w = self.get(v, p);
                if w == Complex64::default() {
                    continue;
                }
                for (a, s) in acc.iter_mut().zip(frame.channel(p)) {
                    *a += w * Complex64::new(s.re as f64, s.im as f64);
                }
            }
            for (d, a) in dst.iter_mut().zip(&acc) {
                *d = C32::new(a.re as f32, a.im as f32);
            }
        }
        Ok(out)
    }
}

/// Principal components of the channel-by-sample matrix stacked over the
/// calibration frames.
pub fn calibrate_compression(frames: &[KSpaceFrame], virtual_channels: usize) -> Result<CompressionMatrix> {
    let first = frames
        .first()
        .ok_or_else(|| Error::config("compression needs at least one calibration frame"))?;
    let jp = first.channels;
    if virtual_channels == 0 || virtual_channels > jp {
        return Err(Error::config(format!(
            "cannot compress {jp} channels to {virtual_channels}"
        )));
    }
    if frames.iter().any(|f| f.channels != jp) {
        return Err(Error::config("calibration frames disagree on channel count"));
    }
    let cols: usize = frames.iter().map(|f| f.samples_per_channel()).sum();
    let mut data = DMatrix::<Complex64>::zeros(jp, cols);
    let mut col = 0;
    for f in frames {
        let m = f.samples_per_channel();
        for p in 0..jp {
            for (i, s) in f.channel(p).iter().enumerate() {
                data[(p, col + i)] = Complex64::new(s.re as f64, s.im as f64);
            }
        }
        col += m;
    }
    let total: f64 = data.iter().map(|v| v.norm_sqr()).sum();
    let svd = data.svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let sv = svd.singular_values;
    // nalgebra does not promise sorted singular values
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    let available = order.len();
    if available < virtual_channels {
        log::warn!(
            "calibration data has rank <= {available}, padding {} virtual channels with zeros",
            virtual_channels - available
        );
    }
    let mut matrix = vec![Complex64::default(); virtual_channels * jp];
    let mut kept = 0.0;
    for (v, &c) in order.iter().take(virtual_channels).enumerate() {
        kept += sv[c] * sv[c];
        for p in 0..jp {
            matrix[v * jp + p] = u[(p, c)].conj();
        }
    }
    Ok(CompressionMatrix {
        virtual_channels,
        physical_channels: jp,
        matrix,
        energy_fraction: if total > 0.0 { (kept / total).min(1.0) } else { 1.0 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_frame(rng: &mut ChaCha8Rng, channels: usize) -> KSpaceFrame {
        let mut f = KSpaceFrame::zeros(0, 0, channels, vec![0.0, 1.0, 2.0], 8);
        for v in &mut f.samples {
            *v = C32::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        }
        f
    }

    #[test]
    fn full_rank_keeps_all_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = random_frame(&mut rng, 4);
        let c = calibrate_compression(std::slice::from_ref(&f), 4).unwrap();
        assert!((c.energy_fraction - 1.0).abs() < 1e-12);
        assert!(c.orthonormality_defect() < 1e-6);
        // unitary: energy of the compressed frame is unchanged
        let out = c.apply(&f).unwrap();
        let e = |fr: &KSpaceFrame| fr.samples.iter().map(|v| v.norm_sqr() as f64).sum::<f64>();
        assert!((e(&out) - e(&f)).abs() / e(&f) < 1e-5);
    }

    #[test]
    fn duplicated_pair_collapses_to_one_channel() {
        // oracle: a rank-1 pair [a; 2a] keeps all of its energy in one component
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut f = random_frame(&mut rng, 2);
        let m = f.samples_per_channel();
        let a: Vec<C32> = f.channel(0).to_vec();
        for (d, s) in f.channel_mut(1).iter_mut().zip(&a) {
            *d = s * 2.0;
        }
        let c = calibrate_compression(&[f.clone()], 1).unwrap();
        assert!(c.energy_fraction >= 0.999, "{}", c.energy_fraction);
        let w = [c.get(0, 0), c.get(0, 1)];
        assert!((w[1].norm() / w[0].norm() - 2.0).abs() < 1e-6);
        assert_eq!(c.apply(&f).unwrap().samples.len(), m);
    }

    #[test]
    fn rejects_bad_requests() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = random_frame(&mut rng, 3);
        assert!(calibrate_compression(&[], 1).is_err());
        assert!(calibrate_compression(std::slice::from_ref(&f), 4).is_err());
        assert!(calibrate_compression(&[f], 0).is_err());
    }

    #[test]
    fn rank_deficient_calibration_pads_with_zero_rows() {
        let mut f = KSpaceFrame::zeros(0, 0, 4, vec![0.0], 2);
        for (i, v) in f.samples.iter_mut().enumerate() {
            *v = C32::new(i as f32 + 1.0, 0.0);
        }
        let c = calibrate_compression(&[f], 3).unwrap();
        assert_eq!(c.virtual_channels, 3);
        assert!((0..4).all(|p| c.get(2, p) == Complex64::default()));
        assert!(c.orthonormality_defect() < 1e-6);
    }
}
