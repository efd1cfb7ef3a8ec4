//! Five-stage frame pipeline: datasource (`src`), preprocessing (`pre`),
//! reconstruction (`rec`), postprocessing (`pst`) and datasink (`snk`).
//!
//! Every stage is a thread reading one bounded mailbox. `rec` fans frames
//! out to the temporal executor and puts results back into input order
//! before handing them on, so delivery order never depends on `T`.

pub mod actors;
pub mod model;
pub mod post;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc::{channel, sync_channel, Receiver, SyncSender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use crate::decomp::{AuditEntry, ReconJob, TemporalExecutor, TemporalSchedule};
use crate::fft::FftCounter;
use crate::ingest::{DatasetHeader, ImageOut, Mode, RtiWriter, RtkReader};
use crate::metrics::{median, PerfReport, StageStats};
use crate::nlinv::scale_to_norm;
use crate::planner::ReconPlan;
use crate::preproc::{
    calibrate_compression, grid_adjoint_with_delay, CompressionMatrix, GriddedData, PsfCache,
    PsfKernel,
};
use crate::seqsim::KSpaceFrame;
use crate::{Error, Result, C32};

pub use actors::{run_chain, ChainTrace, StageFn};
pub use model::{simulate_pipeline, ClockTrace};
pub use post::{magnitude, median3, phase_difference, postprocess, Postprocessor};

pub const STAGES: [&str; 5] = ["src", "pre", "rec", "pst", "snk"];
pub const DEFAULT_QUEUE: usize = 4;

#[derive(Clone, Debug)]
pub struct PipelineConfig {
    pub plan: ReconPlan,
    pub mode: Mode,
    /// Physical channels delivered by the source.
    pub channels: usize,
    pub threads: usize,
    pub workers: usize,
    pub schedule: TemporalSchedule,
    /// Compress to this many virtual channels; `None` keeps all.
    pub virtual_channels: Option<usize>,
    /// Frames used to calibrate the compression matrix.
    pub calibration_frames: usize,
    pub queue_capacity: usize,
    pub median_filter: bool,
    /// Readout shift in samples applied during gridding.
    pub gradient_delay: f64,
    pub counter: Option<Arc<FftCounter>>,
    pub psf_cache: Option<Arc<PsfCache>>,
}

impl PipelineConfig {
    /// Defaults for a dataset: one thread, one worker, no compression,
    /// `l = U`, `o = ceil(U/2)`.
    pub fn new(plan: ReconPlan, header: &DatasetHeader) -> Result<Self> {
        let schedule = TemporalSchedule::for_turns(header.turns, plan.newton_steps)?;
        Ok(Self {
            plan,
            mode: header.mode,
            channels: header.channels,
            threads: 1,
            workers: 1,
            schedule,
            virtual_channels: None,
            calibration_frames: 1,
            queue_capacity: DEFAULT_QUEUE,
            median_filter: false,
            gradient_delay: 0.0,
            counter: None,
            psf_cache: None,
        })
    }

    pub fn recon_channels(&self) -> usize {
        self.virtual_channels.unwrap_or(self.channels)
    }

    pub fn validate(&self) -> Result<()> {
        self.plan.validate()?;
        if self.threads == 0 || self.workers == 0 {
            return Err(Error::config("threads and workers must be positive"));
        }
        if self.queue_capacity == 0 {
            return Err(Error::config("queue capacity must be positive"));
        }
        if let Some(v) = self.virtual_channels {
            if v == 0 || v > self.channels {
                return Err(Error::config(format!(
                    "cannot compress {} channels to {v}",
                    self.channels
                )));
            }
            if self.calibration_frames == 0 {
                return Err(Error::config("compression needs at least one calibration frame"));
            }
        }
        if self.schedule.newton_steps != self.plan.newton_steps {
            return Err(Error::config("schedule and plan disagree on the number of Newton steps"));
        }
        Ok(())
    }

    /// Reconstruction series of a frame and its index within the series.
    /// Flow encodings form separate series per slice.
    pub fn series_of(&self, frame_index: usize, slice_id: usize) -> (usize, usize) {
        match self.mode {
            Mode::Flow => (2 * slice_id + frame_index % 2, frame_index / 2),
            _ => (slice_id, frame_index),
        }
    }
}

#[derive(Clone, Debug)]
pub struct PipelineSummary {
    pub report: PerfReport,
    pub audit: Vec<AuditEntry>,
    pub compression: Option<CompressionMatrix>,
    pub images_written: usize,
}

/// Frame message passed between stages.
struct Msg<P> {
    tag: usize,
    frame_index: usize,
    slice_id: usize,
    entered: Instant,
    /// Busy time per stage so far.
    stage_ms: [f64; 5],
    cg_iterations: usize,
    payload: P,
}

impl<P> Msg<P> {
    fn map<Q>(self, payload: Q) -> Msg<Q> {
        Msg {
            tag: self.tag,
            frame_index: self.frame_index,
            slice_id: self.slice_id,
            entered: self.entered,
            stage_ms: self.stage_ms,
            cg_iterations: self.cg_iterations,
            payload,
        }
    }
}

struct Prepared {
    series: usize,
    series_frame: usize,
    z: GriddedData,
    psf: Arc<PsfKernel>,
}

/// Shared failure flag and first error.
#[derive(Default)]
struct Control {
    abort: AtomicBool,
    error: Mutex<Option<(&'static str, Error)>>,
    in_flight: AtomicUsize,
    peak: AtomicUsize,
}

impl Control {
    fn fail(&self, stage: &'static str, err: Error) {
        let mut slot = self.error.lock().expect("control poisoned");
        if slot.is_none() {
            log::error!("stage {stage} failed: {err}");
            *slot = Some((stage, err));
        }
        self.abort.store(true, Ordering::SeqCst);
    }

    fn aborted(&self) -> bool {
        self.abort.load(Ordering::SeqCst)
    }
}

struct SinkLog {
    completed: Vec<Instant>,
    latency_ms: Vec<f64>,
    stage_ms: Vec<[f64; 5]>,
    cg_iterations: usize,
    last_good: Option<usize>,
    images: usize,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

fn spawn<F, T>(name: &str, f: F) -> Result<thread::JoinHandle<T>>
where
    F: FnOnce() -> T + Send + 'static,
    T: Send + 'static,
{
    thread::Builder::new()
        .name(name.to_string())
        .spawn(f)
        .map_err(|e| Error::Decomposition(format!("cannot spawn {name}: {e}")))
}

/// Jobs queued per reconstruction thread in front of the temporal executor.
const EXEC_QUEUE: usize = 1;

impl PipelineConfig {
    /// Upper bound on frames between `src` and `snk` at any time: one per
    /// stage and reconstruction thread plus every queue slot.
    pub fn in_flight_bound(&self) -> usize {
        let calib = if self.virtual_channels.is_some() {
            self.calibration_frames
        } else {
            0
        };
        STAGES.len()
            + self.threads
            + (STAGES.len() - 1) * self.queue_capacity
            + self.threads * EXEC_QUEUE
            + calib
    }
}

/// Runs every frame of `source` through the five stages and hands the
/// output images to `sink` in input order.
pub fn run_pipeline<I, S>(cfg: &PipelineConfig, source: I, sink: S) -> Result<PipelineSummary>
where
    I: Iterator<Item = Result<KSpaceFrame>> + Send + 'static,
    S: FnMut(&ImageOut) -> Result<()> + Send + 'static,
{
    cfg.validate()?;
    let cap = cfg.queue_capacity;
    let ctl = Arc::new(Control::default());
    let t_start = Instant::now();

    let (src_tx, pre_rx) = sync_channel::<Msg<KSpaceFrame>>(cap);
    let (pre_tx, rec_rx) = sync_channel::<Msg<Prepared>>(cap);
    let (rec_tx, pst_rx) = sync_channel::<Msg<Vec<C32>>>(cap);
    let (pst_tx, snk_rx) = sync_channel::<Msg<Vec<ImageOut>>>(cap);

    let src = {
        let ctl = ctl.clone();
        spawn("src", move || stage_src(source, src_tx, &ctl))?
    };
    let pre = {
        let (ctl, cfg) = (ctl.clone(), cfg.clone());
        spawn("pre", move || stage_pre(&cfg, pre_rx, pre_tx, &ctl))?
    };
    let rec = {
        let (ctl, cfg) = (ctl.clone(), cfg.clone());
        spawn("rec", move || stage_rec(&cfg, rec_rx, rec_tx, &ctl))?
    };
    let pst = {
        let (ctl, cfg) = (ctl.clone(), cfg.clone());
        spawn("pst", move || stage_pst(&cfg, pst_rx, pst_tx, &ctl))?
    };
    let snk = {
        let ctl = ctl.clone();
        spawn("snk", move || stage_snk(snk_rx, sink, &ctl))?
    };

    let panicked = |name: &str| Error::Decomposition(format!("stage {name} panicked"));
    src.join().map_err(|_| panicked("src"))?;
    let compression = pre.join().map_err(|_| panicked("pre"))?;
    let mut audit = rec.join().map_err(|_| panicked("rec"))?;
    pst.join().map_err(|_| panicked("pst"))?;
    let log = snk.join().map_err(|_| panicked("snk"))?;
    let wall = t_start.elapsed();

    if let Some((stage, err)) = ctl.error.lock().expect("control poisoned").take() {
        return Err(Error::Stage {
            stage,
            last_good: log.last_good,
            source: Box::new(err),
        });
    }

    audit.sort_by_key(|a| (a.series, a.frame));
    let max_in_flight = ctl.peak.load(Ordering::SeqCst);
    let bound = cfg.in_flight_bound();
    if max_in_flight > bound {
        log::warn!("{max_in_flight} frames in flight, expected at most {bound}");
    }
    let report = build_report(cfg, &log, wall, max_in_flight);
    Ok(PipelineSummary {
        report,
        audit,
        compression,
        images_written: log.images,
    })
}

fn build_report(cfg: &PipelineConfig, log: &SinkLog, wall: Duration, max_in_flight: usize) -> PerfReport {
    let frames = log.completed.len();
    let stages = STAGES
        .iter()
        .enumerate()
        .map(|(s, name)| {
            let samples: Vec<f64> = log.stage_ms.iter().map(|m| m[s]).collect();
            StageStats::from_samples(name, &samples)
        })
        .collect();
    let fill = STAGES.len() - 1;
    let gaps: Vec<f64> = log
        .completed
        .windows(2)
        .map(|w| ms(w[1] - w[0]))
        .collect();
    // Skip prologue and epilogue when there is anything left in between.
    let steady = if frames > 2 * fill + 1 {
        &gaps[fill..gaps.len() - fill]
    } else {
        &gaps[..]
    };
    let steady_frame_ms = median(steady)
        .or_else(|| log.latency_ms.first().copied())
        .unwrap_or(0.0);
    let latency_mean_ms = if frames == 0 {
        0.0
    } else {
        log.latency_ms.iter().sum::<f64>() / frames as f64
    };
    let (fft_normal, fft_setup, fft_other) = match &cfg.counter {
        Some(c) => (c.normal(), c.setup(), c.other()),
        None => (0, 0, 0),
    };
    PerfReport {
        frames,
        fps: if wall.is_zero() {
            0.0
        } else {
            frames as f64 / wall.as_secs_f64()
        },
        wall_ms: ms(wall),
        threads: cfg.threads,
        workers: cfg.workers,
        stages,
        latency_mean_ms,
        steady_frame_ms,
        prologue_frames: fill.min(frames.saturating_sub(1)),
        epilogue_frames: fill.min(frames.saturating_sub(1)),
        max_in_flight,
        cg_iterations: log.cg_iterations,
        fft_normal,
        fft_setup,
        fft_other,
        speedup: None,
        efficiency: None,
    }
}

fn stage_src<I>(source: I, tx: SyncSender<Msg<KSpaceFrame>>, ctl: &Control)
where
    I: Iterator<Item = Result<KSpaceFrame>>,
{
    let mut last: BTreeMap<usize, usize> = BTreeMap::new();
    let mut source = source;
    for tag in 0.. {
        if ctl.aborted() {
            return;
        }
        let t0 = Instant::now();
        let frame = match source.next() {
            None => return,
            Some(Err(e)) => return ctl.fail("src", e),
            Some(Ok(f)) => f,
        };
        let read_ms = ms(t0.elapsed());
        if let Some(&prev) = last.get(&frame.slice_id) {
            if frame.frame_index <= prev {
                return ctl.fail(
                    "src",
                    Error::Ordering {
                        frame: frame.frame_index,
                        slice: frame.slice_id,
                        last_frame: prev,
                        last_slice: frame.slice_id,
                    },
                );
            }
        }
        last.insert(frame.slice_id, frame.frame_index);
        let now = ctl.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        ctl.peak.fetch_max(now, Ordering::SeqCst);
        let mut stage_ms = [0.0; 5];
        stage_ms[0] = read_ms;
        let msg = Msg {
            tag,
            frame_index: frame.frame_index,
            slice_id: frame.slice_id,
            entered: t0,
            stage_ms,
            cg_iterations: 0,
            payload: frame,
        };
        if tx.send(msg).is_err() {
            return;
        }
    }
}

fn stage_pre(
    cfg: &PipelineConfig,
    rx: Receiver<Msg<KSpaceFrame>>,
    tx: SyncSender<Msg<Prepared>>,
    ctl: &Control,
) -> Option<CompressionMatrix> {
    let cache = cfg.psf_cache.clone().unwrap_or_default();
    let mut scales: BTreeMap<usize, f32> = BTreeMap::new();
    let mut rx = rx.into_iter();

    let compression = match cfg.virtual_channels {
        None => None,
        Some(v) => {
            let calib: Vec<_> = rx.by_ref().take(cfg.calibration_frames).collect();
            let frames: Vec<KSpaceFrame> = calib.iter().map(|m| m.payload.clone()).collect();
            if frames.is_empty() {
                return None;
            }
            let matrix = match calibrate_compression(&frames, v) {
                Ok(m) => m,
                Err(e) => {
                    ctl.fail("pre", e);
                    return None;
                }
            };
            log::info!(
                "compressing {} to {} channels, {:.2}% energy kept",
                matrix.physical_channels,
                matrix.virtual_channels,
                100.0 * matrix.energy_fraction
            );
            for msg in calib {
                if !prepare_one(cfg, &cache, &mut scales, Some(&matrix), msg, &tx, ctl) {
                    return Some(matrix);
                }
            }
            Some(matrix)
        }
    };
    for msg in rx {
        if ctl.aborted() || !prepare_one(cfg, &cache, &mut scales, compression.as_ref(), msg, &tx, ctl) {
            break;
        }
    }
    compression
}

/// Grids one frame and forwards it; false stops the stage.
fn prepare_one(
    cfg: &PipelineConfig,
    cache: &PsfCache,
    scales: &mut BTreeMap<usize, f32>,
    compression: Option<&CompressionMatrix>,
    msg: Msg<KSpaceFrame>,
    tx: &SyncSender<Msg<Prepared>>,
    ctl: &Control,
) -> bool {
    let t0 = Instant::now();
    let (series, series_frame) = cfg.series_of(msg.frame_index, msg.slice_id);
    let result = (|| {
        let compressed;
        let frame = match compression {
            Some(m) => {
                compressed = m.apply(&msg.payload)?;
                &compressed
            }
            None => &msg.payload,
        };
        if frame.channels != cfg.recon_channels() {
            return Err(Error::format(format!(
                "frame {} has {} channels, expected {}",
                frame.frame_index,
                frame.channels,
                cfg.recon_channels()
            )));
        }
        let mut z = grid_adjoint_with_delay(frame, &cfg.plan, cfg.gradient_delay)?;
        let psf = cache.get_or_build(&frame.spoke_angles, frame.samples_per_spoke, &cfg.plan)?;
        // The first frame of a series fixes the data scale for the rest.
        match scales.get(&series) {
            Some(&s) => z.scale(s),
            None => {
                let s = scale_to_norm(&mut z, cfg.plan.data_norm);
                scales.insert(series, s);
            }
        }
        if !z.z.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
            return Err(Error::NonFinite(format!("gridded frame {}", frame.frame_index)));
        }
        Ok(Prepared {
            series,
            series_frame,
            z,
            psf,
        })
    })();
    match result {
        Ok(p) => {
            let mut out = msg.map(p);
            out.stage_ms[1] = ms(t0.elapsed());
            tx.send(out).is_ok()
        }
        Err(e) => {
            ctl.fail("pre", e);
            false
        }
    }
}

fn stage_rec(
    cfg: &PipelineConfig,
    rx: Receiver<Msg<Prepared>>,
    tx: SyncSender<Msg<Vec<C32>>>,
    ctl: &Arc<Control>,
) -> Vec<AuditEntry> {
    let mut exec = match TemporalExecutor::new(
        &cfg.plan,
        cfg.recon_channels(),
        cfg.threads,
        cfg.workers,
        cfg.schedule,
        EXEC_QUEUE,
        cfg.counter.clone(),
    ) {
        Ok(e) => e,
        Err(e) => {
            ctl.fail("rec", e);
            return Vec::new();
        }
    };
    let results = exec.take_results();
    let (meta_tx, meta_rx) = channel::<Msg<()>>();
    let reseq = {
        let ctl = ctl.clone();
        thread::Builder::new()
            .name("rec-order".into())
            .spawn(move || resequence(results, meta_rx, tx, &ctl))
    };
    let reseq = match reseq {
        Ok(h) => h,
        Err(e) => {
            ctl.fail("rec", Error::Decomposition(format!("cannot spawn resequencer: {e}")));
            return Vec::new();
        }
    };

    for msg in rx {
        if ctl.aborted() {
            break;
        }
        let tag = msg.tag;
        let Prepared {
            series,
            series_frame,
            z,
            psf,
        } = msg.payload;
        let meta = Msg {
            tag,
            frame_index: msg.frame_index,
            slice_id: msg.slice_id,
            entered: msg.entered,
            stage_ms: msg.stage_ms,
            cg_iterations: 0,
            payload: (),
        };
        if meta_tx.send(meta).is_err() {
            break;
        }
        let job = ReconJob {
            series,
            frame: series_frame,
            tag,
            z,
            psf,
        };
        if let Err(e) = exec.submit(job) {
            ctl.fail("rec", e);
            break;
        }
    }
    drop(meta_tx);
    if let Err(e) = exec.finish() {
        ctl.fail("rec", e);
    }
    reseq.join().unwrap_or_else(|_| {
        ctl.fail("rec", Error::Decomposition("resequencer panicked".into()));
        Vec::new()
    })
}

/// Restores input order of completed reconstructions.
fn resequence(
    results: Receiver<crate::decomp::ReconDone>,
    meta: Receiver<Msg<()>>,
    tx: SyncSender<Msg<Vec<C32>>>,
    ctl: &Control,
) -> Vec<AuditEntry> {
    let mut audit = Vec::new();
    let mut pending = BTreeMap::new();
    let mut next_meta = meta.iter();
    let mut next = None::<Msg<()>>;
    let mut stopped = false;
    // Keep draining after a failure so no reconstruction thread blocks.
    for done in results {
        audit.push(done.audit.clone());
        pending.insert(done.tag, done);
        loop {
            if next.is_none() {
                next = next_meta.next();
            }
            let Some(m) = next.as_ref() else { break };
            let Some(done) = pending.remove(&m.tag) else { break };
            let m = next.take().expect("checked above");
            if stopped {
                continue;
            }
            match done.result {
                Ok(r) => {
                    let cg = r.cg_iterations();
                    let mut out = m.map(r.image);
                    out.stage_ms[2] = ms(r.elapsed);
                    out.cg_iterations = cg;
                    if tx.send(out).is_err() {
                        stopped = true;
                    }
                }
                Err(e) => {
                    ctl.fail("rec", e);
                    stopped = true;
                }
            }
        }
    }
    audit
}

fn stage_pst(
    cfg: &PipelineConfig,
    rx: Receiver<Msg<Vec<C32>>>,
    tx: SyncSender<Msg<Vec<ImageOut>>>,
    ctl: &Control,
) {
    let mut post = Postprocessor::new(cfg.plan.n, cfg.mode, cfg.median_filter);
    for msg in rx {
        let t0 = Instant::now();
        match post.process(msg.frame_index, msg.slice_id, &msg.payload) {
            Ok(images) => {
                let mut out = msg.map(images);
                out.stage_ms[3] = ms(t0.elapsed());
                if tx.send(out).is_err() {
                    return;
                }
            }
            Err(e) => return ctl.fail("pst", e),
        }
    }
    if !ctl.aborted() {
        if let Err(e) = post.finish() {
            ctl.fail("pst", e);
        }
    }
}

fn stage_snk<S>(rx: Receiver<Msg<Vec<ImageOut>>>, mut sink: S, ctl: &Control) -> SinkLog
where
    S: FnMut(&ImageOut) -> Result<()>,
{
    let mut log = SinkLog {
        completed: Vec::new(),
        latency_ms: Vec::new(),
        stage_ms: Vec::new(),
        cg_iterations: 0,
        last_good: None,
        images: 0,
    };
    let mut failed = false;
    for mut msg in rx {
        if failed {
            continue;
        }
        let t0 = Instant::now();
        for img in &msg.payload {
            if let Err(e) = sink(img) {
                ctl.fail("snk", e);
                failed = true;
                break;
            }
            log.images += 1;
        }
        if failed {
            continue;
        }
        ctl.in_flight.fetch_sub(1, Ordering::SeqCst);
        let now = Instant::now();
        msg.stage_ms[4] = ms(now - t0);
        log.completed.push(now);
        log.latency_ms.push(ms(now - msg.entered));
        log.stage_ms.push(msg.stage_ms);
        log.cg_iterations += msg.cg_iterations;
        log.last_good = Some(msg.frame_index);
    }
    log
}

/// Reconstructs an `.rtk` file into an `.rti` file (plus index).
/// `configure` turns the dataset header into a pipeline configuration.
pub fn reconstruct_file<F>(input: &Path, output: &Path, configure: F) -> Result<PipelineSummary>
where
    F: FnOnce(&DatasetHeader) -> Result<PipelineConfig>,
{
    let reader = RtkReader::open(input)?;
    let header = reader.header().clone();
    let cfg = configure(&header)?;
    if cfg.plan.n != header.n {
        return Err(Error::config(format!(
            "plan is for n = {}, dataset has n = {}",
            cfg.plan.n, header.n
        )));
    }
    let writer = Arc::new(Mutex::new(Some(RtiWriter::create(output, header.n, true)?)));
    let sink_writer = writer.clone();
    let summary = run_pipeline(&cfg, reader, move |img: &ImageOut| {
        sink_writer
            .lock()
            .expect("writer poisoned")
            .as_mut()
            .expect("writer open")
            .write_image(img)
    })?;
    let w = writer
        .lock()
        .expect("writer poisoned")
        .take()
        .expect("writer open");
    w.finish()?;
    Ok(summary)
}
