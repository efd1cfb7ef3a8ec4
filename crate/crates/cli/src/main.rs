//! `rtnlinv` command-line driver.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_complex::Complex64;

use rtnlinv::autotune::{legal_configs, ProtocolKey, TuningDb, TuningRecord};
use rtnlinv::config::{phantom_from, trajectory_from, Config};
use rtnlinv::decomp::GROUP_SIZE_MAX;
use rtnlinv::fft::FftCounter;
use rtnlinv::ingest::{DatasetHeader, Mode, RtkReader, RtkWriter};
use rtnlinv::pipeline::{reconstruct_file, PipelineConfig, PipelineSummary};
use rtnlinv::planner::{benchmark_fft, FftLookupTable, GAMMA_MIN};
use rtnlinv::preproc::PsfCache;
use rtnlinv::seqsim::{simulate_slice, PhantomSpec, TrajectorySpec};
use rtnlinv::{Error, ReconPlan};

#[derive(Parser, Debug)]
#[command(name = "rtnlinv", version, about = "Real-time nonlinear inverse reconstruction for radial MRI")]
struct Cli {
    /// Format of the final report on stdout.
    #[arg(long, value_enum, global = true, default_value_t = ReportFormat::Text)]
    report: ReportFormat,

    /// More log output (repeat for more).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ReportFormat {
    Text,
    Json,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a radial dataset of an analytic phantom.
    Phantom(PhantomArgs),
    /// Reconstruct an `.rtk` dataset into an `.rti` image stream.
    Reconstruct(ReconstructArgs),
    /// Measure FFT runtimes for a range of sizes and write a lookup table.
    BenchFft(BenchArgs),
    /// Summarize an autotuning database.
    TuneReport(TuneReportArgs),
}

#[derive(Args, Debug)]
struct PhantomArgs {
    #[arg(long, short)]
    out: PathBuf,
    /// Image side in pixels.
    #[arg(long, default_value_t = 64)]
    n: usize,
    #[arg(long, default_value_t = 11)]
    spokes: usize,
    #[arg(long, default_value_t = 5)]
    turns: usize,
    /// Samples per spoke (default `2 n`).
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long, default_value_t = 4)]
    channels: usize,
    #[arg(long, default_value_t = 30)]
    frames: usize,
    #[arg(long, default_value_t = 1)]
    slices: usize,
    /// single_slice, multi_slice or flow.
    #[arg(long, default_value = "single_slice")]
    mode: Mode,
    /// Per-component noise standard deviation.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Phase (radians) added to the moving structure in odd flow frames.
    #[arg(long, default_value_t = 0.6)]
    flow_phase: f64,
    /// Config file with `[trajectory]` and `[phantom]` sections.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum AutotuneMode {
    /// Use the fastest recorded configuration.
    Select,
    /// Try the next unmeasured configuration and record its runtime.
    Learn,
}

#[derive(Args, Debug)]
struct ReconstructArgs {
    #[arg(long, short)]
    input: PathBuf,
    #[arg(long, short)]
    output: PathBuf,
    /// Reconstruction threads `T`.
    #[arg(long, short = 't')]
    threads: Option<usize>,
    /// Workers per thread `A`.
    #[arg(long, short = 'a')]
    workers: Option<usize>,
    /// Pick `T` and `A` from the tuning database.
    #[arg(
        long,
        value_enum,
        num_args = 0..=1,
        require_equals = true,
        default_missing_value = "select",
        conflicts_with_all = ["threads", "workers"]
    )]
    autotune: Option<AutotuneMode>,
    #[arg(long, default_value = "rtnlinv-tuning.tsv")]
    tuning_db: PathBuf,
    /// Worker budget for autotuning (default: available cores).
    #[arg(long)]
    total_workers: Option<usize>,
    /// FFT lookup table for grid selection.
    #[arg(long)]
    fft_table: Option<PathBuf>,
    #[arg(long, default_value_t = GAMMA_MIN)]
    gamma_min: f64,
    /// Fixed oversampling instead of a lookup table.
    #[arg(long, conflicts_with = "fft_table")]
    gamma: Option<f64>,
    #[arg(long)]
    newton_steps: Option<usize>,
    #[arg(long)]
    alpha0: Option<f64>,
    #[arg(long)]
    alpha_q: Option<f64>,
    #[arg(long)]
    cg_tol: Option<f64>,
    /// Compress to this many virtual channels.
    #[arg(long)]
    virtual_channels: Option<usize>,
    /// Temporal median-of-3 on magnitude images.
    #[arg(long)]
    median: bool,
    #[arg(long, default_value_t = rtnlinv::pipeline::DEFAULT_QUEUE)]
    queue: usize,
    /// Kernel cache sidecar, loaded if present and rewritten afterwards.
    #[arg(long)]
    psf_cache: Option<PathBuf>,
    /// Write the temporal audit log here.
    #[arg(long)]
    audit: Option<PathBuf>,
    /// Reference frame time for speedup/efficiency in the report.
    #[arg(long)]
    baseline_ms: Option<f64>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, default_value_t = 32)]
    lo: usize,
    #[arg(long, default_value_t = 1024)]
    hi: usize,
    #[arg(long, default_value_t = 3)]
    trials: usize,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TuneReportArgs {
    #[arg(long, default_value = "rtnlinv-tuning.tsv")]
    tuning_db: PathBuf,
}

fn exit_code(err: &Error) -> u8 {
    if err.is_divergence() {
        4
    } else if err.is_data_error() {
        3
    } else if is_config(err) {
        2
    } else {
        1
    }
}

fn is_config(err: &Error) -> bool {
    match err {
        Error::Config(_) => true,
        Error::Stage { source, .. } => is_config(source),
        _ => false,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Phantom(a) => cmd_phantom(&a, cli.report),
        Command::Reconstruct(a) => cmd_reconstruct(&a, cli.report),
        Command::BenchFft(a) => cmd_bench_fft(&a, cli.report),
        Command::TuneReport(a) => cmd_tune_report(&a, cli.report),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn usage(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn cmd_phantom(a: &PhantomArgs, report: ReportFormat) -> Result<(), Error> {
    let defaults = TrajectorySpec::new(a.spokes, a.turns, a.samples.unwrap_or(2 * a.n));
    let (spec, mut phantom) = match &a.config {
        Some(path) => {
            let cfg = Config::parse(&fs::read_to_string(path)?)?;
            let spec = trajectory_from(&cfg.section_or_empty("trajectory"), &defaults)?;
            let mut section = cfg.section_or_empty("phantom");
            if section.get("coils").is_none() {
                section.insert("coils", a.channels);
            }
            (spec, phantom_from(&section, a.n as f64)?)
        }
        None => (defaults, PhantomSpec::dynamic_head(a.n as f64, a.channels)),
    };
    phantom.noise_std = a.noise;
    phantom.seed = a.seed;
    phantom.validate()?;

    let mut header = DatasetHeader::new(a.n, phantom.coils, &spec, a.frames);
    header.mode = a.mode;
    header.slices = a.slices;
    header.validate().map_err(|e| usage(e.to_string()))?;

    // Odd flow frames carry an extra phase on the moving structure.
    let encoded = {
        let mut p = phantom.clone();
        let moving = 4.min(p.ellipses.len().saturating_sub(1));
        if let Some(e) = p.ellipses.get_mut(moving) {
            e.amplitude *= Complex64::from_polar(1.0, a.flow_phase);
        }
        p
    };
    let mut writer = RtkWriter::create(&a.out, header.clone())?;
    for f in 0..a.frames {
        let source = if a.mode == Mode::Flow && f % 2 == 1 {
            &encoded
        } else {
            &phantom
        };
        for s in 0..a.slices {
            writer.write_frame(&simulate_slice(source, &spec, f, s)?)?;
        }
    }
    writer.finish()?;
    match report {
        ReportFormat::Text => println!(
            "wrote {}: {} frames x {} slices, N={} J={} K={} U={} S={} ({})",
            a.out.display(),
            a.frames,
            a.slices,
            a.n,
            header.channels,
            spec.spokes,
            spec.turns,
            spec.samples_per_spoke,
            a.mode.as_str()
        ),
        ReportFormat::Json => println!(
            "{}",
            serde_json::json!({
                "output": a.out,
                "frames": a.frames,
                "slices": a.slices,
                "n": a.n,
                "channels": header.channels,
                "spokes": spec.spokes,
                "turns": spec.turns,
                "samples_per_spoke": spec.samples_per_spoke,
                "mode": a.mode.as_str(),
            })
        ),
    }
    Ok(())
}

fn build_plan(a: &ReconstructArgs, n: usize) -> Result<ReconPlan, Error> {
    let mut plan = match (&a.fft_table, a.gamma) {
        (Some(path), _) => ReconPlan::from_table(n, &FftLookupTable::load(path)?, a.gamma_min)?,
        (None, Some(g)) => ReconPlan::with_gamma(n, g)?,
        (None, None) => ReconPlan::with_gamma(n, 1.5)?,
    };
    if let Some(m) = a.newton_steps {
        plan.newton_steps = m;
    }
    if let Some(v) = a.alpha0 {
        plan.alpha0 = v;
    }
    if let Some(v) = a.alpha_q {
        plan.alpha_q = v;
    }
    if let Some(v) = a.cg_tol {
        plan.cg_tol = v;
    }
    plan.validate()?;
    Ok(plan)
}

fn cmd_reconstruct(a: &ReconstructArgs, report: ReportFormat) -> Result<(), Error> {
    let header = RtkReader::open(&a.input)?.header().clone();
    let plan = build_plan(a, header.n)?;
    let channels = a.virtual_channels.unwrap_or(header.channels);
    let key = ProtocolKey::new(header.mode, header.n, header.frames, channels);
    let total = a
        .total_workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));

    let mut db = match a.autotune {
        Some(_) => Some(TuningDb::open(&a.tuning_db)?),
        None => None,
    };
    let (threads, workers) = match (a.autotune, &db) {
        (Some(AutotuneMode::Select), Some(db)) => db.select(&key),
        (Some(AutotuneMode::Learn), Some(db)) => db.learn_step(&key, total),
        _ => (a.threads.unwrap_or(1), a.workers.unwrap_or(1)),
    };
    if threads == 0 || workers == 0 {
        return Err(usage("threads and workers must be positive"));
    }
    if workers > GROUP_SIZE_MAX || workers > channels {
        return Err(usage(format!(
            "workers per thread must be at most {} and at most the channel count {channels}",
            GROUP_SIZE_MAX
        )));
    }
    log::info!("reconstructing with T={threads} A={workers}, G={} G_c={}", plan.g, plan.gc);

    let cache = match &a.psf_cache {
        Some(p) if p.exists() => Arc::new(PsfCache::load(p)?),
        _ => Arc::new(PsfCache::new()),
    };
    let counter = FftCounter::new();
    let summary: PipelineSummary = reconstruct_file(&a.input, &a.output, |h| {
        let mut cfg = PipelineConfig::new(plan.clone(), h)?;
        cfg.threads = threads;
        cfg.workers = workers;
        cfg.virtual_channels = a.virtual_channels;
        cfg.median_filter = a.median;
        cfg.queue_capacity = a.queue;
        cfg.counter = Some(counter.clone());
        cfg.psf_cache = Some(cache.clone());
        Ok(cfg)
    })?;
    if let Some(p) = &a.psf_cache {
        cache.save(p)?;
    }
    if let Some(p) = &a.audit {
        let text: String = summary.audit.iter().map(|e| format!("{e}\n")).collect();
        fs::write(p, text)?;
    }
    let mut perf = summary.report;
    if let Some(base) = a.baseline_ms {
        perf.compare_to(base, threads * workers);
    }
    if let (Some(AutotuneMode::Learn), Some(db)) = (a.autotune, db.as_mut()) {
        db.append(TuningRecord::new(key, threads, workers, perf.steady_frame_ms))?;
        let tried = db.records().iter().filter(|r| r.key == key).count();
        log::info!("recorded T={threads} A={workers}; {tried}/{} configurations measured", legal_configs(total).len());
    }
    match report {
        ReportFormat::Text => print!("{}", perf.to_text()),
        ReportFormat::Json => println!(
            "{}",
            serde_json::to_string_pretty(&perf).map_err(|e| Error::Config(e.to_string()))?
        ),
    }
    Ok(())
}

fn cmd_bench_fft(a: &BenchArgs, report: ReportFormat) -> Result<(), Error> {
    if a.lo < 2 || a.lo > a.hi || a.trials == 0 {
        return Err(usage("need 2 <= lo <= hi and trials >= 1"));
    }
    let table = benchmark_fft(a.lo, a.hi, a.trials)?;
    table.save(&a.out)?;
    let (fastest, us) = table
        .entries
        .iter()
        .map(|(s, t)| (*s, *t / (*s * *s) as f64))
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .unwrap_or((0, 0.0));
    match report {
        ReportFormat::Text => println!(
            "wrote {} entries ({}..={}) to {}; cheapest per pixel: {fastest} ({:.4} ns/px)",
            table.entries.len(),
            a.lo,
            a.hi,
            a.out.display(),
            us * 1e3
        ),
        ReportFormat::Json => println!(
            "{}",
            serde_json::json!({
                "output": a.out,
                "entries": table.entries.len(),
                "lo": a.lo,
                "hi": a.hi,
                "warnings": table.warnings,
            })
        ),
    }
    Ok(())
}

fn cmd_tune_report(a: &TuneReportArgs, report: ReportFormat) -> Result<(), Error> {
    let db = TuningDb::open(&a.tuning_db)?;
    match report {
        ReportFormat::Text => {
            if db.is_empty() {
                println!("no records in {}", a.tuning_db.display());
            } else {
                print!("{}", db.report());
            }
        }
        ReportFormat::Json => {
            let rows: Vec<_> = db
                .records()
                .iter()
                .map(|r| {
                    serde_json::json!({
                        "mode": r.key.mode.as_str(),
                        "n": r.key.n,
                        "frames_bucket": r.key.frames_bucket,
                        "channels": r.key.channels,
                        "threads": r.threads,
                        "workers": r.workers,
                        "runtime_ms": r.runtime_ms,
                        "timestamp": r.timestamp,
                    })
                })
                .collect();
            println!("{}", serde_json::Value::Array(rows));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn staged(source: Error) -> Error {
        Error::Stage {
            stage: "rec",
            last_good: Some(3),
            source: Box::new(source),
        }
    }

    #[test]
    fn exit_codes_see_through_stage_errors() {
        let divergence = || Error::Divergence {
            frame: 4,
            detail: "residual grew".into(),
        };
        assert_eq!(exit_code(&divergence()), 4);
        assert_eq!(exit_code(&staged(divergence())), 4);
        assert_eq!(exit_code(&staged(Error::NonFinite("data".into()))), 3);
        assert_eq!(exit_code(&staged(Error::Config("bad".into()))), 2);
        assert_eq!(exit_code(&staged(Error::Decomposition("pool".into()))), 1);
    }
}
