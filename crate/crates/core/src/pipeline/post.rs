//! Postprocessing: magnitude, flow phase difference, temporal median.

use std::collections::{BTreeMap, VecDeque};

use crate::ingest::{ImageKind, ImageOut, Mode};
use crate::{Error, Result, C32};

pub fn magnitude(image: &[C32]) -> Vec<f32> {
    image.iter().map(|v| v.norm()).collect()
}

/// `arg(even * conj(odd))` per pixel, in `(-pi, pi]`.
///
/// With `odd = even * e^{i theta}` this is `-theta`.
pub fn phase_difference(even: &[C32], odd: &[C32]) -> Vec<f32> {
    even.iter().zip(odd).map(|(a, b)| (a * b.conj()).arg()).collect()
}

/// Pixelwise median of three images.
pub fn median3(a: &[f32], b: &[f32], c: &[f32]) -> Vec<f32> {
    a.iter()
        .zip(b)
        .zip(c)
        .map(|((&x, &y), &z)| x.max(y).min(x.min(y).max(z)))
        .collect()
}

/// Per-slice postprocessing state. Frames of one slice must arrive in
/// increasing order; slices may interleave.
#[derive(Clone, Debug)]
pub struct Postprocessor {
    n: usize,
    mode: Mode,
    median: bool,
    /// Last raw magnitudes per (slice, parity) for the median filter.
    history: BTreeMap<(usize, usize), VecDeque<Vec<f32>>>,
    /// Waiting even frame of each slice in flow mode.
    pending: BTreeMap<usize, (usize, Vec<C32>)>,
}

impl Postprocessor {
    pub fn new(n: usize, mode: Mode, median: bool) -> Self {
        Self {
            n,
            mode,
            median,
            history: BTreeMap::new(),
            pending: BTreeMap::new(),
        }
    }

    /// Turns one reconstructed `n x n` image into output images: always the
    /// magnitude, plus the phase difference when it completes a flow pair.
    pub fn process(&mut self, frame_index: usize, slice_id: usize, image: &[C32]) -> Result<Vec<ImageOut>> {
        if image.len() != self.n * self.n {
            return Err(Error::config(format!(
                "image of {} pixels for n = {}",
                image.len(),
                self.n
            )));
        }
        let mut out = Vec::with_capacity(2);
        let mag = self.filtered_magnitude(frame_index, slice_id, image);
        out.push(ImageOut {
            frame_index,
            slice_id,
            n: self.n,
            kind: ImageKind::Magnitude,
            pixels: mag,
        });
        if self.mode == Mode::Flow {
            if frame_index.is_multiple_of(2) {
                if let Some((f, _)) = self.pending.get(&slice_id) {
                    return Err(Error::Pairing(format!(
                        "slice {slice_id}: frame {f} has no partner before frame {frame_index}"
                    )));
                }
                self.pending.insert(slice_id, (frame_index, image.to_vec()));
            } else {
                match self.pending.remove(&slice_id) {
                    Some((f, even)) if f + 1 == frame_index => out.push(ImageOut {
                        frame_index,
                        slice_id,
                        n: self.n,
                        kind: ImageKind::PhaseDifference,
                        pixels: phase_difference(&even, image),
                    }),
                    _ => {
                        return Err(Error::Pairing(format!(
                            "slice {slice_id}: frame {frame_index} has no preceding even frame"
                        )))
                    }
                }
            }
        }
        Ok(out)
    }

    /// Fails if a flow pair is left incomplete.
    pub fn finish(&self) -> Result<()> {
        match self.pending.iter().next() {
            Some((slice, (f, _))) => Err(Error::Pairing(format!(
                "slice {slice}: frame {f} is the last frame and has no partner"
            ))),
            None => Ok(()),
        }
    }

    fn filtered_magnitude(&mut self, frame_index: usize, slice_id: usize, image: &[C32]) -> Vec<f32> {
        let mag = magnitude(image);
        if !self.median {
            return mag;
        }
        // Flow encodings differ in phase only, but filter each separately so
        // the two series stay independent.
        let parity = if self.mode == Mode::Flow { frame_index % 2 } else { 0 };
        let hist = self.history.entry((slice_id, parity)).or_default();
        hist.push_back(mag.clone());
        if hist.len() > 3 {
            hist.pop_front();
        }
        if hist.len() < 3 {
            return mag;
        }
        median3(&hist[0], &hist[1], &hist[2])
    }
}

/// Batch form of [`Postprocessor`] over `(frame_index, slice_id, image)`.
pub fn postprocess(
    images: &[(usize, usize, Vec<C32>)],
    n: usize,
    mode: Mode,
    median: bool,
) -> Result<Vec<ImageOut>> {
    let mut post = Postprocessor::new(n, mode, median);
    let mut out = Vec::new();
    for (f, s, img) in images {
        out.extend(post.process(*f, *s, img)?);
    }
    post.finish()?;
    Ok(out)
}
