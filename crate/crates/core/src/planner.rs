//! Grid planning: FFT benchmarking, lookup tables, grid-size selection and
//! the centred crop/pad used for the reduced coil grid.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::time::{Duration, Instant};

use crate::fft::{Fft2, FftUse};
use crate::nlinv::WeightSpec;
use crate::{Error, Result, C32};

/// Default lower bound on the anti-aliasing factor.
pub const GAMMA_MIN: f64 = 1.4;
/// Default upper bound on the search window.
pub const GAMMA_MAX: f64 = 2.0;

/// Measured 2D FFT runtimes keyed by side length.
#[derive(Clone, Debug, PartialEq)]
pub struct FftLookupTable {
    pub entries: BTreeMap<usize, f64>,
    pub machine_key: String,
    pub library_key: String,
    /// Messages about unreliable timings produced while benchmarking.
    pub warnings: Vec<String>,
}

pub fn library_key() -> String {
    "rustfft-6".to_string()
}

pub fn machine_key() -> String {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let host = fs::read_to_string("/etc/hostname")
        .map(|s| s.trim().to_string())
        .unwrap_or_else(|_| "unknown".into());
    format!("{host}-{}-{threads}t", std::env::consts::ARCH)
}

impl FftLookupTable {
    pub fn from_entries(entries: impl IntoIterator<Item = (usize, f64)>) -> Self {
        Self {
            entries: entries.into_iter().collect(),
            machine_key: machine_key(),
            library_key: library_key(),
            warnings: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some((size, t)) = self.entries.iter().find(|(_, t)| !(**t > 0.0)) {
            return Err(Error::config(format!("runtime for size {size} is {t}, must be > 0")));
        }
        let sizes: Vec<usize> = self.entries.keys().copied().collect();
        if sizes.windows(2).any(|w| w[1] != w[0] + 1) {
            return Err(Error::config("lookup table sizes are not contiguous"));
        }
        Ok(())
    }

    pub fn range(&self) -> Option<(usize, usize)> {
        Some((*self.entries.keys().next()?, *self.entries.keys().next_back()?))
    }

    /// `size<TAB>microseconds` lines, preceded by `#` key lines.
    pub fn to_tsv(&self) -> String {
        let mut out = format!(
            "# machine={}\n# library={}\n",
            self.machine_key, self.library_key
        );
        for (size, us) in &self.entries {
            out.push_str(&format!("{size}\t{us}\n"));
        }
        out
    }

    pub fn from_tsv<R: BufRead>(input: R) -> Result<Self> {
        let mut table = Self {
            entries: BTreeMap::new(),
            machine_key: String::new(),
            library_key: String::new(),
            warnings: Vec::new(),
        };
        for line in input.lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                if let Some((k, v)) = meta.trim().split_once('=') {
                    match k.trim() {
                        "machine" => table.machine_key = v.trim().to_string(),
                        "library" => table.library_key = v.trim().to_string(),
                        _ => {}
                    }
                }
                continue;
            }
            let (size, us) = line
                .split_once('\t')
                .ok_or_else(|| Error::format(format!("bad table line `{line}`")))?;
            let size = size
                .trim()
                .parse()
                .map_err(|_| Error::format(format!("bad size `{size}`")))?;
            let us = us
                .trim()
                .parse()
                .map_err(|_| Error::format(format!("bad runtime `{us}`")))?;
            table.entries.insert(size, us);
        }
        table.validate()?;
        Ok(table)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(self.to_tsv().as_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_tsv(BufReader::new(fs::File::open(path)?))
    }

    /// Loads `path` unless it is missing or was measured on another
    /// machine/library, in which case it is re-benchmarked and rewritten.
    pub fn load_or_benchmark(path: impl AsRef<Path>, lo: usize, hi: usize, trials: usize) -> Result<Self> {
        let path = path.as_ref();
        if let Ok(t) = Self::load(path) {
            let covers = t.range().is_some_and(|(a, b)| a <= lo && b >= hi);
            if t.machine_key == machine_key() && t.library_key == library_key() && covers {
                return Ok(t);
            }
            log::info!("FFT table {} is stale, regenerating", path.display());
        }
        let t = benchmark_fft(lo, hi, trials)?;
        t.save(path)?;
        Ok(t)
    }
}

fn timer_tick() -> Duration {
    let mut best = Duration::MAX;
    for _ in 0..200 {
        let a = Instant::now();
        let mut b = Instant::now();
        while b == a {
            b = Instant::now();
        }
        best = best.min(b - a);
    }
    best
}

/// Minimum wall-clock time over `trials` runs of a 2D complex FFT, for
/// every side length in `lo..=hi`.
pub fn benchmark_fft(lo: usize, hi: usize, trials: usize) -> Result<FftLookupTable> {
    if lo == 0 || hi < lo {
        return Err(Error::config(format!("invalid size range {lo}..={hi}")));
    }
    if trials == 0 {
        return Err(Error::config("need at least one trial"));
    }
    if hi > 8192 {
        return Err(Error::config(format!("size {hi} exceeds the memory budget")));
    }
    let tick = timer_tick();
    let mut planner = rustfft::FftPlanner::new();
    let mut table = FftLookupTable::from_entries([]);
    for size in lo..=hi {
        let fft = Fft2::with_planner(&mut planner, size);
        let mut data: Vec<C32> = (0..size * size)
            .map(|i| C32::new((i % 7) as f32, (i % 3) as f32))
            .collect();
        let mut scratch = fft.make_scratch();
        fft.forward(&mut data, &mut scratch, FftUse::Other); // warm-up
        let best = (0..trials)
            .map(|_| {
                let t0 = Instant::now();
                fft.forward(&mut data, &mut scratch, FftUse::Other);
                t0.elapsed()
            })
            .min()
            .expect("trials >= 1");
        if best < tick * 10 {
            let msg = format!("size {size}: {best:?} is below 10 timer ticks ({tick:?})");
            log::warn!("{msg}");
            table.warnings.push(msg);
        }
        table
            .entries
            .insert(size, (best.as_secs_f64() * 1e6).max(1e-3));
    }
    Ok(table)
}

/// Smallest even grid side `>= 2 gamma n` (with a small tolerance so that
/// `2 * 1.4 * 160` lands on 448, not 449).
fn min_grid(n: usize, gamma: f64) -> usize {
    let g = (2.0 * gamma * n as f64 - 1e-9).ceil() as usize;
    g + g % 2
}

fn max_grid(n: usize, gamma: f64) -> usize {
    let g = (2.0 * gamma * n as f64 + 1e-9).floor() as usize;
    g - g % 2
}

/// Fastest even grid side within `[2 gamma_min N, 2 gamma_max N]`, ties to
/// the smallest. Returns `(G, gamma = G / 2N)`.
pub fn select_grid(
    n: usize,
    table: &FftLookupTable,
    gamma_min: f64,
    gamma_max: f64,
) -> Result<(usize, f64)> {
    if n == 0 {
        return Err(Error::config("image side must be >= 1"));
    }
    let lo = min_grid(n, gamma_min);
    let hi = max_grid(n, gamma_max);
    if lo > hi {
        return Err(Error::config(format!(
            "empty grid interval for N={n}, gamma in [{gamma_min}, {gamma_max}]"
        )));
    }
    let mut best: Option<(usize, f64)> = None;
    for (&size, &t) in table.entries.range(lo..=hi) {
        if size % 2 != 0 {
            continue;
        }
        if best.is_none_or(|(_, bt)| t < bt) {
            best = Some((size, t));
        }
    }
    let (g, _) = best.ok_or_else(|| {
        Error::config(format!(
            "lookup table does not cover even sizes in [{lo}, {hi}] for N={n}"
        ))
    })?;
    Ok((g, g as f64 / (2 * n) as f64))
}

/// Grid side for a fixed `gamma` (no table), rounded up to even.
pub fn fixed_grid(n: usize, gamma: f64) -> usize {
    min_grid(n, gamma)
}

/// Reduced coil grid side, `floor(G / 4)`.
pub fn coil_grid(g: usize) -> usize {
    g / 4
}

fn crop_offset(g: usize, gc: usize) -> usize {
    g / 2 - gc / 2
}

/// Centred `gc x gc` block of a `g x g` k-space array.
pub fn crop_k(x: &[C32], g: usize, gc: usize) -> Vec<C32> {
    assert!(gc <= g && x.len() == g * g);
    let off = crop_offset(g, gc);
    let mut out = Vec::with_capacity(gc * gc);
    for y in 0..gc {
        let row = (y + off) * g + off;
        out.extend_from_slice(&x[row..row + gc]);
    }
    out
}

/// Embeds a centred `gc x gc` block into a zero `g x g` array.
pub fn pad_k(x: &[C32], gc: usize, g: usize) -> Vec<C32> {
    let mut out = vec![C32::default(); g * g];
    pad_k_into(x, gc, g, &mut out);
    out
}

pub fn pad_k_into(x: &[C32], gc: usize, g: usize, out: &mut [C32]) {
    assert!(gc <= g && x.len() == gc * gc && out.len() == g * g);
    out.fill(C32::default());
    let off = crop_offset(g, gc);
    for y in 0..gc {
        let row = (y + off) * g + off;
        out[row..row + gc].copy_from_slice(&x[y * gc..(y + 1) * gc]);
    }
}

/// Grid geometry and solver settings for one reconstruction.
#[derive(Clone, Debug, PartialEq)]
pub struct ReconPlan {
    /// Output image side.
    pub n: usize,
    pub gamma: f64,
    /// Oversampled grid side (even).
    pub g: usize,
    /// Coil grid side.
    pub gc: usize,
    pub newton_steps: usize,
    pub alpha0: f64,
    pub alpha_q: f64,
    pub alpha_min: f64,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
    /// Scale applied to the previous frame before it is used as the
    /// regularization target.
    pub damping: f64,
    pub weights: WeightSpec,
    /// Gridded data are scaled to this l2 norm before solving.
    pub data_norm: f64,
}

impl ReconPlan {
    /// Plan with grid side `g` for an `n`-pixel image, `G_c = floor(G/4)`.
    pub fn with_grid(n: usize, g: usize) -> Result<Self> {
        let plan = Self {
            n,
            gamma: g as f64 / (2 * n.max(1)) as f64,
            g,
            gc: coil_grid(g),
            newton_steps: 6,
            alpha0: 1.0,
            alpha_q: 0.5,
            alpha_min: 1e-6,
            cg_tol: 1e-3,
            cg_max_iter: 200,
            damping: 1.0,
            weights: WeightSpec::default(),
            data_norm: 100.0,
        };
        plan.validate()?;
        Ok(plan)
    }

    /// Fixed oversampling `gamma` (the table-free default is 1.5).
    pub fn with_gamma(n: usize, gamma: f64) -> Result<Self> {
        Self::with_grid(n, fixed_grid(n, gamma))
    }

    pub fn from_table(n: usize, table: &FftLookupTable, gamma_min: f64) -> Result<Self> {
        let (g, _) = select_grid(n, table, gamma_min, GAMMA_MAX)?;
        Self::with_grid(n, g)
    }

    /// Field-of-view side on the grid, `G / 2`.
    pub fn fov(&self) -> usize {
        self.g / 2
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        if self.n == 0 {
            return bad("N must be >= 1".into());
        }
        if !self.g.is_multiple_of(2) || self.g < 2 * self.n {
            return bad(format!("grid side {} must be even and >= 2N = {}", self.g, 2 * self.n));
        }
        if self.gc == 0 || self.gc > self.g {
            return bad(format!("coil grid {} must be in 1..={}", self.gc, self.g));
        }
        if self.newton_steps == 0 {
            return bad("at least one Newton step is required".into());
        }
        if !(self.alpha0 > self.alpha_min && self.alpha_min > 0.0) {
            return bad(format!(
                "need alpha0 > alpha_min > 0 (got {} and {})",
                self.alpha0, self.alpha_min
            ));
        }
        if !(self.alpha_q > 0.0 && self.alpha_q < 1.0) {
            return bad(format!("alpha reduction {} must lie in (0, 1)", self.alpha_q));
        }
        if !(self.cg_tol >= 0.0) || self.cg_max_iter == 0 {
            return bad("cg_tol must be >= 0 and cg_max_iter >= 1".into());
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return bad(format!("damping {} must lie in (0, 1]", self.damping));
        }
        if !(self.data_norm > 0.0 && self.data_norm.is_finite()) {
            return bad("data_norm must be positive".into());
        }
        Ok(())
    }

    /// Regularization strength for Newton step `m`.
    pub fn alpha_at(&self, step: usize) -> f64 {
        (self.alpha0 * self.alpha_q.powi(step as i32)).max(self.alpha_min)
    }
}
