//! Measured-runtime database `(protocol) -> (T, A) -> R`.
//!
//! Records are appended one line at a time to a tab-separated file:
//! `mode N frames_bucket J T A runtime_ms timestamp`.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use crate::decomp::GROUP_SIZE_MAX;
use crate::ingest::Mode;
use crate::{Error, Result};

/// Upper bounds of the frame-count buckets; the last bucket is open.
const BUCKETS: [usize; 5] = [5, 10, 25, 50, 200];

/// Bucket index of a frame count.
pub fn frames_bucket(frames: usize) -> usize {
    BUCKETS.iter().position(|&b| frames <= b).unwrap_or(BUCKETS.len())
}

fn bucket_label(bucket: usize) -> String {
    BUCKETS
        .get(bucket)
        .map_or_else(|| "max".to_string(), |b| b.to_string())
}

fn parse_bucket(s: &str) -> Result<usize> {
    if s == "max" {
        return Ok(BUCKETS.len());
    }
    let v: usize = s
        .parse()
        .map_err(|_| Error::format(format!("bad frames bucket `{s}`")))?;
    BUCKETS
        .iter()
        .position(|&b| b == v)
        .ok_or_else(|| Error::format(format!("unknown frames bucket `{s}`")))
}

/// Acquisition/reconstruction parameters that drive the best `(T, A)`.
/// Field order defines the canonical sort order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ProtocolKey {
    pub mode: Mode,
    pub n: usize,
    pub frames_bucket: usize,
    pub channels: usize,
}

impl ProtocolKey {
    pub fn new(mode: Mode, n: usize, frames: usize, channels: usize) -> Self {
        Self {
            mode,
            n,
            frames_bucket: frames_bucket(frames),
            channels,
        }
    }

    /// Lexicographic distance; `None` across imaging modes.
    fn distance(&self, other: &ProtocolKey) -> Option<(usize, usize, usize)> {
        (self.mode == other.mode).then(|| {
            (
                self.n.abs_diff(other.n),
                self.frames_bucket.abs_diff(other.frames_bucket),
                self.channels.abs_diff(other.channels),
            )
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TuningRecord {
    pub key: ProtocolKey,
    pub threads: usize,
    pub workers: usize,
    /// Milliseconds per frame.
    pub runtime_ms: f64,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

impl TuningRecord {
    pub fn new(key: ProtocolKey, threads: usize, workers: usize, runtime_ms: f64) -> Self {
        Self {
            key,
            threads,
            workers,
            runtime_ms,
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
        }
    }

    pub fn config(&self) -> (usize, usize) {
        (self.threads, self.workers)
    }

    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.key.mode.as_str(),
            self.key.n,
            bucket_label(self.key.frames_bucket),
            self.key.channels,
            self.threads,
            self.workers,
            self.runtime_ms,
            self.timestamp
        )
    }

    pub fn from_line(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 8 {
            return Err(Error::format(format!("tuning line has {} fields, expected 8", f.len())));
        }
        let num = |s: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| Error::format(format!("bad integer `{s}` in tuning line")))
        };
        let runtime_ms: f64 = f[6]
            .parse()
            .map_err(|_| Error::format(format!("bad runtime `{}`", f[6])))?;
        if !(runtime_ms > 0.0 && runtime_ms.is_finite()) {
            return Err(Error::format(format!("runtime {runtime_ms} must be positive")));
        }
        Ok(Self {
            key: ProtocolKey {
                mode: f[0].parse()?,
                n: num(f[1])?,
                frames_bucket: parse_bucket(f[2])?,
                channels: num(f[3])?,
            },
            threads: num(f[4])?,
            workers: num(f[5])?,
            runtime_ms,
            timestamp: f[7]
                .parse()
                .map_err(|_| Error::format(format!("bad timestamp `{}`", f[7])))?,
        })
    }
}

/// `(T, A)` pairs with `A <= 4` and `T A <= total`, ordered by `A` then `T`.
pub fn legal_configs(total_workers: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for a in 1..=GROUP_SIZE_MAX.min(total_workers) {
        for t in 1..=total_workers / a {
            out.push((t, a));
        }
    }
    out
}

#[derive(Clone, Debug, Default)]
pub struct TuningDb {
    records: Vec<TuningRecord>,
    path: Option<PathBuf>,
}

impl TuningDb {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or starts) the database at `path`; appends go to the file.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut records = Vec::new();
        match File::open(&path) {
            Ok(f) => {
                for (i, line) in BufReader::new(f).lines().enumerate() {
                    let line = line?;
                    let line = line.trim_end_matches('\r');
                    if line.trim().is_empty() || line.starts_with('#') {
                        continue;
                    }
                    match TuningRecord::from_line(line) {
                        Ok(r) => records.push(r),
                        // a torn final line from an interrupted append
                        Err(e) => log::warn!("{}:{}: skipping record: {e}", path.display(), i + 1),
                    }
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(e.into()),
        }
        Ok(Self {
            records,
            path: Some(path),
        })
    }

    pub fn records(&self) -> &[TuningRecord] {
        &self.records
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Adds a record, appending it to the backing file as a single write.
    pub fn append(&mut self, record: TuningRecord) -> Result<()> {
        if let Some(path) = &self.path {
            let mut f = OpenOptions::new().create(true).append(true).open(path)?;
            f.write_all(format!("{}\n", record.to_line()).as_bytes())?;
            f.sync_data()?;
        }
        self.records.push(record);
        Ok(())
    }

    fn for_key(&self, key: &ProtocolKey) -> impl Iterator<Item = &TuningRecord> + '_ {
        let key = *key;
        self.records.iter().filter(move |r| r.key == key)
    }

    /// Fastest recorded `(T, A)` for exactly this key.
    pub fn best_exact(&self, key: &ProtocolKey) -> Option<(usize, usize)> {
        let mut best: Option<&TuningRecord> = None;
        for r in self.for_key(key) {
            let better = match best {
                None => true,
                Some(b) => {
                    r.runtime_ms < b.runtime_ms
                        || (r.runtime_ms == b.runtime_ms && (r.workers, r.threads) < (b.workers, b.threads))
                }
            };
            if better {
                best = Some(r);
            }
        }
        best.map(TuningRecord::config)
    }

    /// Nearest recorded key of the same imaging mode.
    pub fn nearest_key(&self, key: &ProtocolKey) -> Option<ProtocolKey> {
        self.records
            .iter()
            .filter_map(|r| key.distance(&r.key).map(|d| (d, r.key)))
            .min()
            .map(|(_, k)| k)
    }

    /// Best configuration for `key`, falling back to the nearest protocol
    /// and finally to `(1, 1)`.
    pub fn select(&self, key: &ProtocolKey) -> (usize, usize) {
        self.best_exact(key)
            .or_else(|| self.nearest_key(key).and_then(|k| self.best_exact(&k)))
            .unwrap_or((1, 1))
    }

    /// Next configuration to measure in learning mode.
    pub fn learn_step(&self, key: &ProtocolKey, total_workers: usize) -> (usize, usize) {
        let tried: Vec<(usize, usize)> = self.for_key(key).map(TuningRecord::config).collect();
        legal_configs(total_workers)
            .into_iter()
            .find(|c| !tried.contains(c))
            .unwrap_or_else(|| self.select(key))
    }

    /// Human-readable summary, grouped by protocol.
    pub fn report(&self) -> String {
        let mut keys: Vec<ProtocolKey> = self.records.iter().map(|r| r.key).collect();
        keys.sort();
        keys.dedup();
        let mut out = String::new();
        for k in keys {
            let mut rs: Vec<&TuningRecord> = self.for_key(&k).collect();
            rs.sort_by(|a, b| a.runtime_ms.total_cmp(&b.runtime_ms));
            out.push_str(&format!(
                "{} N={} frames<={} J={}: {} runs\n",
                k.mode,
                k.n,
                bucket_label(k.frames_bucket),
                k.channels,
                rs.len()
            ));
            for r in rs {
                out.push_str(&format!(
                    "  T={} A={}  {:.2} ms/frame  {:.1} fps\n",
                    r.threads,
                    r.workers,
                    r.runtime_ms,
                    1000.0 / r.runtime_ms
                ));
            }
        }
        out
    }
}
