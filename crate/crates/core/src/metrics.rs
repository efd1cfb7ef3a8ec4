//! Image-quality and performance figures.

use serde::Serialize;

/// `rms(x - ref) / rms(ref)`.
pub fn nrmse(x: &[f64], reference: &[f64]) -> f64 {
    assert_eq!(x.len(), reference.len());
    let err: f64 = x.iter().zip(reference).map(|(a, b)| (a - b).powi(2)).sum();
    let norm: f64 = reference.iter().map(|b| b * b).sum();
    if norm == 0.0 {
        return if err == 0.0 { 0.0 } else { f64::INFINITY };
    }
    (err / norm).sqrt()
}

/// NRMSE after scaling `x` by the least-squares factor onto `reference`.
pub fn nrmse_scaled(x: &[f64], reference: &[f64]) -> f64 {
    let xx: f64 = x.iter().map(|a| a * a).sum();
    let s = if xx > 0.0 {
        x.iter().zip(reference).map(|(a, b)| a * b).sum::<f64>() / xx
    } else {
        0.0
    };
    let scaled: Vec<f64> = x.iter().map(|a| a * s).collect();
    nrmse(&scaled, reference)
}

/// `S = t_old / t_new`.
pub fn speedup(t_old: f64, t_new: f64) -> f64 {
    t_old / t_new
}

/// `E = S_p / p`.
pub fn efficiency(speedup: f64, p: usize) -> f64 {
    speedup / p as f64
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct StageStats {
    pub name: String,
    pub frames: usize,
    pub mean_ms: f64,
    pub max_ms: f64,
}

impl StageStats {
    pub fn from_samples(name: &str, ms: &[f64]) -> Self {
        Self {
            name: name.to_string(),
            frames: ms.len(),
            mean_ms: if ms.is_empty() {
                0.0
            } else {
                ms.iter().sum::<f64>() / ms.len() as f64
            },
            max_ms: ms.iter().copied().fold(0.0, f64::max),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct PerfReport {
    pub frames: usize,
    pub fps: f64,
    pub wall_ms: f64,
    pub threads: usize,
    pub workers: usize,
    pub stages: Vec<StageStats>,
    pub latency_mean_ms: f64,
    /// Median reconstruction time per frame outside prologue/epilogue.
    pub steady_frame_ms: f64,
    pub prologue_frames: usize,
    pub epilogue_frames: usize,
    pub max_in_flight: usize,
    pub cg_iterations: usize,
    pub fft_normal: u64,
    pub fft_setup: u64,
    pub fft_other: u64,
    pub speedup: Option<f64>,
    pub efficiency: Option<f64>,
}

impl PerfReport {
    /// Fills `speedup`/`efficiency` against a baseline frame time.
    pub fn compare_to(&mut self, baseline_frame_ms: f64, p: usize) {
        let s = speedup(baseline_frame_ms, self.steady_frame_ms);
        self.speedup = Some(s);
        self.efficiency = Some(efficiency(s, p));
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "frames {}  fps {:.2}  wall {:.1} ms  T={} A={}\n",
            self.frames, self.fps, self.wall_ms, self.threads, self.workers
        ));
        for s in &self.stages {
            out.push_str(&format!(
                "  {:<4} mean {:>9.3} ms  max {:>9.3} ms  ({} frames)\n",
                s.name, s.mean_ms, s.max_ms, s.frames
            ));
        }
        out.push_str(&format!(
            "latency mean {:.1} ms  steady frame {:.2} ms  prologue {} epilogue {}  in flight <= {}\n",
            self.latency_mean_ms,
            self.steady_frame_ms,
            self.prologue_frames,
            self.epilogue_frames,
            self.max_in_flight
        ));
        out.push_str(&format!(
            "cg iterations {}  ffts normal {} setup {} other {}\n",
            self.cg_iterations, self.fft_normal, self.fft_setup, self.fft_other
        ));
        if let (Some(s), Some(e)) = (self.speedup, self.efficiency) {
            out.push_str(&format!("speedup {s:.2}  efficiency {e:.2}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn speedup_and_efficiency_from_fft_timings() {
        let s = speedup(555.0, 288.0);
        assert!((s - 1.93).abs() < 0.005);
        assert!((efficiency(s, 2) - 0.96).abs() < 0.005);
    }

    #[test]
    fn nrmse_basics() {
        let r = [1.0, 2.0, 3.0];
        assert_eq!(nrmse(&r, &r), 0.0);
        assert!(nrmse_scaled(&[2.0, 4.0, 6.0], &r) < 1e-15);
        assert!((nrmse(&[0.0; 3], &r) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }
}
