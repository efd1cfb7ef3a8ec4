//! Out-of-order reconstruction of consecutive frames.
//!
//! Frame `n` starts from, and is regularized towards, the estimate of
//! frame `h(n, m)`:
//!
//! * `n - 1` for the first `l` frames and for the final Newton step,
//! * otherwise the most recent fully reconstructed frame in `[n - o, n - 1]`.
//!
//! Waiting only ever happens on strictly smaller frame indices, so the
//! scheme cannot deadlock.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, SyncSender};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use crate::fft::FftCounter;
use crate::nlinv::{Estimate, FrameResult, Solver};
use crate::planner::ReconPlan;
use crate::preproc::{GriddedData, PsfKernel};
use crate::{Error, Result};

use super::channels::WorkerGroup;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TemporalSchedule {
    /// Length of the strictly sequential prefix.
    pub l: usize,
    /// Look-back window.
    pub o: usize,
    /// Newton steps per frame.
    pub newton_steps: usize,
}

impl TemporalSchedule {
    pub fn new(l: usize, o: usize, newton_steps: usize) -> Result<Self> {
        if l == 0 || o == 0 || newton_steps == 0 {
            return Err(Error::config(format!(
                "temporal schedule needs l, o, M >= 1 (got {l}, {o}, {newton_steps})"
            )));
        }
        Ok(Self { l, o, newton_steps })
    }

    /// `l = U`, `o = ceil(U / 2)`.
    pub fn for_turns(turns: usize, newton_steps: usize) -> Result<Self> {
        Self::new(turns, turns.div_ceil(2), newton_steps)
    }
}

/// Frame whose estimate frame `n >= 1` uses in Newton step `m`, given
/// which frames are complete. If nothing in the window is complete the
/// oldest frame of the window is returned; the caller waits for it.
pub fn h(n: usize, m: usize, sched: &TemporalSchedule, is_complete: impl Fn(usize) -> bool) -> usize {
    assert!(n >= 1, "frame 0 has no predecessor");
    if n <= sched.l || m + 1 >= sched.newton_steps {
        return n - 1;
    }
    let lo = n.saturating_sub(sched.o);
    (lo..n).rev().find(|&k| is_complete(k)).unwrap_or(lo)
}

/// Per-frame record of where initialization and regularization came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AuditEntry {
    pub series: usize,
    pub frame: usize,
    pub thread: usize,
    pub workers: usize,
    /// Source frame per Newton step; `None` means the fixed initial guess.
    pub sources: Vec<Option<usize>>,
    /// Global event counter when the first step began (initial estimate
    /// in hand) and when the result was published.
    pub started: u64,
    pub finished: u64,
}

impl AuditEntry {
    pub fn init_from(&self) -> Option<usize> {
        self.sources.first().copied().flatten()
    }

    pub fn final_from(&self) -> Option<usize> {
        self.sources.last().copied().flatten()
    }
}

fn fmt_source(s: Option<usize>) -> String {
    s.map_or_else(|| "init".to_string(), |k| k.to_string())
}

impl fmt::Display for AuditEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "frame {}: init←{}, reg_final←{}, thread {}, workers {}",
            self.frame,
            fmt_source(self.init_from()),
            fmt_source(self.final_from()),
            self.thread,
            self.workers
        )
    }
}

#[derive(Debug, Default)]
struct SeriesLedger {
    /// Newton steps completed per frame (monotone).
    progress: HashMap<usize, usize>,
    done: BTreeMap<usize, Arc<Estimate>>,
    failed: Vec<usize>,
    /// Every frame below this is complete.
    low_water: usize,
}

/// Shared completion ledger with blocking look-ups.
#[derive(Debug)]
pub struct Ledger {
    sched: TemporalSchedule,
    series: Mutex<HashMap<usize, SeriesLedger>>,
    changed: Condvar,
    clock: AtomicU64,
    timeout: Duration,
}

impl Ledger {
    pub fn new(sched: TemporalSchedule) -> Self {
        Self {
            sched,
            series: Mutex::new(HashMap::new()),
            changed: Condvar::new(),
            clock: AtomicU64::new(0),
            timeout: Duration::from_secs(600),
        }
    }

    /// Upper bound on any single wait before the frame is aborted.
    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn schedule(&self) -> &TemporalSchedule {
        &self.sched
    }

    fn tick(&self) -> u64 {
        self.clock.fetch_add(1, Ordering::SeqCst)
    }

    /// Blocks until `h(n, m)` is available and returns it with its estimate.
    pub fn acquire(&self, series: usize, n: usize, m: usize) -> Result<(usize, Arc<Estimate>)> {
        let mut guard = self.series.lock().expect("ledger poisoned");
        loop {
            let s = guard.entry(series).or_default();
            let k = h(n, m, &self.sched, |k| s.done.contains_key(&k));
            if let Some(est) = s.done.get(&k) {
                return Ok((k, est.clone()));
            }
            if s.failed.contains(&k) {
                return Err(Error::Decomposition(format!(
                    "frame {n} depends on failed frame {k} (series {series})"
                )));
            }
            let (g, res) = self
                .changed
                .wait_timeout(guard, self.timeout)
                .expect("ledger poisoned");
            guard = g;
            if res.timed_out() {
                return Err(Error::Decomposition(format!(
                    "timed out waiting for frame {k} (frame {n}, step {m}, series {series})"
                )));
            }
        }
    }

    pub fn record_step(&self, series: usize, n: usize, steps_done: usize) {
        let mut guard = self.series.lock().expect("ledger poisoned");
        let p = guard.entry(series).or_default().progress.entry(n).or_insert(0);
        *p = (*p).max(steps_done);
    }

    pub fn steps_done(&self, series: usize, n: usize) -> usize {
        let guard = self.series.lock().expect("ledger poisoned");
        guard
            .get(&series)
            .and_then(|s| s.progress.get(&n).copied())
            .unwrap_or(0)
    }

    /// Publishes frame `n` and returns the event count of the publication.
    pub fn complete(&self, series: usize, n: usize, estimate: Arc<Estimate>) -> u64 {
        let mut guard = self.series.lock().expect("ledger poisoned");
        let t = self.tick();
        let s = guard.entry(series).or_default();
        s.progress.insert(n, self.sched.newton_steps);
        s.done.insert(n, estimate);
        while s.done.contains_key(&s.low_water) {
            s.low_water += 1;
        }
        // nothing at or after the first unfinished frame looks further back than o
        let keep_from = s.low_water.saturating_sub(self.sched.o + 1);
        s.done = s.done.split_off(&keep_from);
        drop(guard);
        self.changed.notify_all();
        t
    }

    pub fn fail(&self, series: usize, n: usize) {
        let mut guard = self.series.lock().expect("ledger poisoned");
        guard.entry(series).or_default().failed.push(n);
        drop(guard);
        self.changed.notify_all();
    }
}

/// One frame of work for the executor.
#[derive(Clone, Debug)]
pub struct ReconJob {
    /// Independent series (slice, flow encoding) this frame belongs to.
    pub series: usize,
    /// Frame index within the series.
    pub frame: usize,
    /// Opaque ordering key handed back with the result.
    pub tag: usize,
    pub z: GriddedData,
    pub psf: Arc<PsfKernel>,
}

#[derive(Debug)]
pub struct ReconDone {
    pub tag: usize,
    pub series: usize,
    pub frame: usize,
    pub result: Result<FrameResult>,
    pub audit: AuditEntry,
}

/// `T` reconstruction threads, each with its own group of `A` workers,
/// fed round-robin.
pub struct TemporalExecutor {
    senders: Vec<SyncSender<ReconJob>>,
    handles: Vec<JoinHandle<()>>,
    results: Option<Receiver<ReconDone>>,
    ledger: Arc<Ledger>,
    next: usize,
}

impl TemporalExecutor {
    pub fn new(
        plan: &ReconPlan,
        channels: usize,
        threads: usize,
        workers: usize,
        sched: TemporalSchedule,
        queue: usize,
        counter: Option<Arc<FftCounter>>,
    ) -> Result<Self> {
        if threads == 0 {
            return Err(Error::config("need at least one reconstruction thread"));
        }
        if sched.newton_steps != plan.newton_steps {
            return Err(Error::config("schedule and plan disagree on the number of Newton steps"));
        }
        let ledger = Arc::new(Ledger::new(sched));
        let (done_tx, done_rx) = mpsc::channel();
        let mut senders = Vec::with_capacity(threads);
        let mut handles = Vec::with_capacity(threads);
        for t in 0..threads {
            let solver = Solver::with_group(plan, WorkerGroup::new(channels, workers)?, counter.clone())?;
            let (tx, rx) = mpsc::sync_channel::<ReconJob>(queue.max(1));
            let ledger = ledger.clone();
            let done_tx = done_tx.clone();
            let handle = std::thread::Builder::new()
                .name(format!("rec-{t}"))
                .spawn(move || {
                    for job in rx {
                        let done = run_job(&solver, &ledger, t, job);
                        if done_tx.send(done).is_err() {
                            break;
                        }
                    }
                })
                .map_err(|e| Error::Decomposition(format!("cannot spawn thread: {e}")))?;
            senders.push(tx);
            handles.push(handle);
        }
        Ok(Self {
            senders,
            handles,
            results: Some(done_rx),
            ledger,
            next: 0,
        })
    }

    pub fn ledger(&self) -> &Arc<Ledger> {
        &self.ledger
    }

    pub fn threads(&self) -> usize {
        self.senders.len()
    }

    /// Hands a job to the next thread; blocks while its queue is full.
    pub fn submit(&mut self, job: ReconJob) -> Result<()> {
        let t = self.next % self.senders.len();
        self.next += 1;
        self.senders[t]
            .send(job)
            .map_err(|_| Error::Decomposition(format!("reconstruction thread {t} stopped")))
    }

    /// Completion stream (completion order, not frame order).
    pub fn take_results(&mut self) -> Receiver<ReconDone> {
        self.results.take().expect("results already taken")
    }

    /// Closes the queues and waits for all threads.
    pub fn finish(mut self) -> Result<()> {
        self.senders.clear();
        for h in self.handles.drain(..) {
            h.join()
                .map_err(|_| Error::Decomposition("reconstruction thread panicked".into()))?;
        }
        Ok(())
    }
}

fn run_job(solver: &Solver, ledger: &Ledger, thread: usize, job: ReconJob) -> ReconDone {
    let plan = solver.plan();
    let channels = job.z.channels;
    let mut audit = AuditEntry {
        series: job.series,
        frame: job.frame,
        thread,
        workers: solver.group().workers(),
        sources: Vec::with_capacity(plan.newton_steps),
        started: 0,
        finished: 0,
    };
    let initial = Arc::new(Estimate::initial(plan, channels));
    let result = (|| {
        let x_init = if job.frame == 0 {
            initial.as_ref().clone()
        } else {
            ledger.acquire(job.series, job.frame, 0)?.1.as_ref().clone()
        };
        audit.started = ledger.tick();
        let sources = &mut audit.sources;
        let res = solver.reconstruct_with(job.frame, &job.z, &job.psf, x_init, |m| {
            if m > 0 {
                ledger.record_step(job.series, job.frame, m);
            }
            if job.frame == 0 {
                sources.push(None);
                return Ok(initial.clone());
            }
            let (k, est) = ledger.acquire(job.series, job.frame, m)?;
            sources.push(Some(k));
            Ok(est)
        })?;
        Ok(res)
    })();
    audit.finished = match &result {
        Ok(r) => ledger.complete(job.series, job.frame, Arc::new(r.estimate.clone())),
        Err(_) => {
            ledger.fail(job.series, job.frame);
            ledger.tick()
        }
    };
    ReconDone {
        tag: job.tag,
        series: job.series,
        frame: job.frame,
        result,
        audit,
    }
}

/// Reconstructs one series with `T` threads of `A` workers and returns the
/// results in frame order together with the audit log.
pub fn run_series(
    plan: &ReconPlan,
    frames: Vec<(GriddedData, Arc<PsfKernel>)>,
    threads: usize,
    workers: usize,
    sched: TemporalSchedule,
    counter: Option<Arc<FftCounter>>,
) -> Result<(Vec<FrameResult>, Vec<AuditEntry>)> {
    let count = frames.len();
    let channels = match frames.first() {
        Some((z, _)) => z.channels,
        None => return Ok((Vec::new(), Vec::new())),
    };
    let mut exec = TemporalExecutor::new(plan, channels, threads, workers, sched, 2, counter)?;
    let results = exec.take_results();
    let collector = std::thread::spawn(move || {
        let mut out: Vec<Option<ReconDone>> = (0..count).map(|_| None).collect();
        for done in results.iter().take(count) {
            let i = done.tag;
            out[i] = Some(done);
        }
        out
    });
    for (i, (z, psf)) in frames.into_iter().enumerate() {
        exec.submit(ReconJob {
            series: 0,
            frame: i,
            tag: i,
            z,
            psf,
        })?;
    }
    exec.finish()?;
    let done = collector
        .join()
        .map_err(|_| Error::Decomposition("result collector panicked".into()))?;
    let mut images = Vec::with_capacity(count);
    let mut audit = Vec::with_capacity(count);
    for d in done {
        let d = d.ok_or_else(|| Error::Decomposition("missing frame result".into()))?;
        audit.push(d.audit);
        images.push(d.result?);
    }
    Ok((images, audit))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sched(l: usize, o: usize, m: usize) -> TemporalSchedule {
        TemporalSchedule::new(l, o, m).unwrap()
    }

    #[test]
    fn prefix_and_final_step_use_previous_frame() {
        let s = sched(4, 2, 6);
        for m in 0..6 {
            assert_eq!(h(3, m, &s, |_| false), 2);
        }
        assert_eq!(h(6, 5, &s, |_| false), 5);
    }

    #[test]
    fn window_picks_most_recent_complete() {
        let s = sched(4, 2, 6);
        // 4 done, 5 running
        assert_eq!(h(6, 0, &s, |k| k == 4), 4);
        assert_eq!(h(6, 0, &s, |k| k <= 5), 5);
        // nothing complete: oldest in window
        assert_eq!(h(6, 0, &s, |_| false), 4);
        // never looks beyond the window
        assert_eq!(h(9, 1, &s, |k| k == 3), 7);
    }

    #[test]
    fn defaults_from_turns() {
        let s = TemporalSchedule::for_turns(5, 6).unwrap();
        assert_eq!((s.l, s.o), (5, 3));
        assert_eq!(TemporalSchedule::for_turns(4, 6).unwrap().o, 2);
        assert!(TemporalSchedule::new(0, 1, 1).is_err());
    }

    #[test]
    fn h_never_reaches_current_or_future() {
        let s = sched(2, 3, 4);
        for n in 1..40 {
            for m in 0..4 {
                for mask in 0..16u32 {
                    let k = h(n, m, &s, |k| mask & (1 << (k % 4)) != 0);
                    assert!(k < n && k + s.o >= n);
                }
            }
        }
    }

    #[test]
    fn ledger_blocks_until_dependency_completes() {
        let s = sched(1, 2, 3);
        let ledger = Arc::new(Ledger::new(s));
        let est = Arc::new(Estimate::zeros(4, 1, 1));
        ledger.complete(0, 0, est.clone());
        let l2 = ledger.clone();
        let waiter = std::thread::spawn(move || l2.acquire(0, 2, 2).map(|(k, _)| k));
        std::thread::sleep(Duration::from_millis(20));
        ledger.record_step(0, 1, 1);
        assert_eq!(ledger.steps_done(0, 1), 1);
        ledger.complete(0, 1, est);
        assert_eq!(waiter.join().unwrap().unwrap(), 1);
    }

    #[test]
    fn failed_dependency_aborts_waiter() {
        let ledger = Arc::new(Ledger::new(sched(4, 2, 2)));
        let l2 = ledger.clone();
        let waiter = std::thread::spawn(move || l2.acquire(0, 1, 0));
        std::thread::sleep(Duration::from_millis(20));
        ledger.fail(0, 0);
        assert!(matches!(waiter.join().unwrap(), Err(Error::Decomposition(_))));
    }

    #[test]
    fn audit_line_format() {
        let a = AuditEntry {
            series: 0,
            frame: 6,
            thread: 1,
            workers: 2,
            sources: vec![Some(4), Some(5), Some(5)],
            started: 0,
            finished: 1,
        };
        assert_eq!(a.to_string(), "frame 6: init←4, reg_final←5, thread 1, workers 2");
    }
}
