use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rtnlinv::ingest::{read_images, RtkReader, RtkWriter};
use rtnlinv::pipeline::{reconstruct_file, run_pipeline, PipelineConfig};
use rtnlinv::seqsim::simulate_slice;
use rtnlinv::{
    C32, DatasetHeader, Error, ImageKind, ImageOut, KSpaceFrame, Mode, PhantomSpec, ReconPlan,
    Result, TrajectorySpec,
};

const N: usize = 16;

fn setup(frames: usize, slices: usize, mode: Mode) -> (PipelineConfig, PhantomSpec, TrajectorySpec) {
    let spec = TrajectorySpec::new(7, 5, 2 * N);
    let mut header = DatasetHeader::new(N, 4, &spec, frames);
    header.slices = slices;
    header.mode = mode;
    let plan = ReconPlan::with_gamma(N, 1.5).unwrap();
    let cfg = PipelineConfig::new(plan, &header).unwrap();
    (cfg, PhantomSpec::dynamic_head(N as f64, 4), spec)
}

/// Frames in acquisition order: all slices of frame 0, then frame 1, ...
fn interleaved(
    phantom: PhantomSpec,
    spec: TrajectorySpec,
    frames: usize,
    slices: usize,
) -> impl Iterator<Item = Result<KSpaceFrame>> + Send + 'static {
    (0..frames).flat_map(move |f| {
        let (phantom, spec) = (phantom.clone(), spec.clone());
        (0..slices).map(move |s| simulate_slice(&phantom, &spec, f, s))
    })
}

type Collected = Arc<Mutex<Vec<ImageOut>>>;

fn collector() -> (Collected, impl FnMut(&ImageOut) -> Result<()> + Send + 'static) {
    let out: Collected = Arc::default();
    let sink = out.clone();
    (out, move |img: &ImageOut| {
        sink.lock().unwrap().push(img.clone());
        Ok(())
    })
}

fn keys(images: &[ImageOut]) -> Vec<(usize, usize, ImageKind)> {
    images.iter().map(|i| (i.frame_index, i.slice_id, i.kind)).collect()
}

#[test]
fn multi_slice_output_follows_input_order() {
    let (mut cfg, phantom, spec) = setup(4, 2, Mode::MultiSlice);
    cfg.threads = 3;
    let (out, sink) = collector();
    let summary = run_pipeline(&cfg, interleaved(phantom, spec, 4, 2), sink).unwrap();
    let images = out.lock().unwrap();
    let expected: Vec<_> = (0..4)
        .flat_map(|f| (0..2).map(move |s| (f, s, ImageKind::Magnitude)))
        .collect();
    assert_eq!(keys(&images), expected);
    assert_eq!(summary.images_written, 8);
    assert_eq!(summary.report.frames, 8);
    assert!(images.iter().all(|i| i.pixels.len() == N * N));
    assert!(summary.report.max_in_flight <= cfg.in_flight_bound());
}

#[test]
fn output_is_independent_of_thread_count() {
    let run = |threads| {
        let (mut cfg, phantom, spec) = setup(6, 1, Mode::SingleSlice);
        cfg.threads = threads;
        let (out, sink) = collector();
        run_pipeline(&cfg, interleaved(phantom, spec, 6, 1), sink).unwrap();
        let images = out.lock().unwrap().clone();
        images
    };
    let one = run(1);
    for t in [2, 4] {
        let many = run(t);
        assert_eq!(keys(&one), keys(&many));
    }
}

#[test]
fn flow_pairs_emit_phase_after_magnitude() {
    let (cfg, phantom, spec) = setup(4, 1, Mode::Flow);
    let (out, sink) = collector();
    run_pipeline(&cfg, interleaved(phantom, spec, 4, 1), sink).unwrap();
    let images = out.lock().unwrap();
    use ImageKind::*;
    assert_eq!(
        keys(&images),
        vec![
            (0, 0, Magnitude),
            (1, 0, Magnitude),
            (1, 0, PhaseDifference),
            (2, 0, Magnitude),
            (3, 0, Magnitude),
            (3, 0, PhaseDifference),
        ]
    );
    // The phantom has no flow encoding, so both encodings agree up to noise.
    let phase = &images[2].pixels;
    let mag = &images[0].pixels;
    let peak = mag.iter().cloned().fold(0.0f32, f32::max);
    let bright: Vec<f32> = phase
        .iter()
        .zip(mag)
        .filter(|(_, &m)| m > 0.5 * peak)
        .map(|(p, _)| p.abs())
        .collect();
    assert!(!bright.is_empty());
    assert!(bright.iter().sum::<f32>() / (bright.len() as f32) < 0.05);
}

#[test]
fn unpaired_flow_frame_fails() {
    let (cfg, phantom, spec) = setup(3, 1, Mode::Flow);
    let (_, sink) = collector();
    let err = run_pipeline(&cfg, interleaved(phantom, spec, 3, 1), sink).unwrap_err();
    assert!(matches!(err, Error::Stage { ref source, .. } if matches!(**source, Error::Pairing(_))), "{err}");
}

#[test]
fn source_failure_reports_last_good_frame() {
    let (cfg, phantom, spec) = setup(8, 1, Mode::SingleSlice);
    let done = Arc::new(AtomicUsize::new(0));
    let seen = done.clone();
    let source = interleaved(phantom, spec, 8, 1).map(move |frame| {
        let frame = frame?;
        if frame.frame_index == 4 {
            // Fail only once frames 0..=3 have left the pipeline.
            while seen.load(Ordering::SeqCst) < 4 {
                std::thread::sleep(Duration::from_millis(2));
            }
            return Err(Error::Truncated { expected: 10, got: 3 });
        }
        Ok(frame)
    });
    let sink = move |_: &ImageOut| {
        done.fetch_add(1, Ordering::SeqCst);
        Ok(())
    };
    match run_pipeline(&cfg, source, sink).unwrap_err() {
        Error::Stage { stage, last_good, source } => {
            assert_eq!(stage, "src");
            assert_eq!(last_good, Some(3));
            assert!(matches!(*source, Error::Truncated { .. }));
        }
        other => panic!("unexpected error {other}"),
    }
}

#[test]
fn non_finite_samples_are_rejected() {
    let (cfg, phantom, spec) = setup(3, 1, Mode::SingleSlice);
    let source = interleaved(phantom, spec, 3, 1).map(|frame| {
        let mut frame = frame?;
        if frame.frame_index == 1 {
            frame.channel_mut(2)[5] = C32::new(f32::NAN, 0.0);
        }
        Ok(frame)
    });
    let (_, sink) = collector();
    let err = run_pipeline(&cfg, source, sink).unwrap_err();
    assert!(err.is_data_error(), "{err}");
}

#[test]
fn repeated_frame_is_an_ordering_error() {
    let (cfg, phantom, spec) = setup(3, 1, Mode::SingleSlice);
    let source = [0, 1, 1]
        .into_iter()
        .map(move |f| simulate_slice(&phantom, &spec, f, 0));
    let (_, sink) = collector();
    let err = run_pipeline(&cfg, source, sink).unwrap_err();
    assert!(matches!(err, Error::Stage { ref source, .. } if matches!(**source, Error::Ordering { .. })), "{err}");
}

#[test]
fn sink_failure_stops_the_pipeline() {
    let (cfg, phantom, spec) = setup(6, 1, Mode::SingleSlice);
    let mut count = 0;
    let sink = move |_: &ImageOut| {
        count += 1;
        if count == 2 {
            Err(Error::Format("disk full".into()))
        } else {
            Ok(())
        }
    };
    match run_pipeline(&cfg, interleaved(phantom, spec, 6, 1), sink).unwrap_err() {
        Error::Stage { stage, last_good, .. } => {
            assert_eq!(stage, "snk");
            assert_eq!(last_good, Some(0));
        }
        other => panic!("unexpected error {other}"),
    }
}

#[test]
fn channel_compression_is_reported() {
    let (mut cfg, phantom, spec) = setup(3, 1, Mode::SingleSlice);
    cfg.virtual_channels = Some(2);
    cfg.workers = 2;
    let (out, sink) = collector();
    let summary = run_pipeline(&cfg, interleaved(phantom, spec, 3, 1), sink).unwrap();
    assert_eq!(out.lock().unwrap().len(), 3);
    assert!(summary.compression.is_some());
}

#[test]
fn file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.rtk");
    let output = dir.path().join("out.rti");
    let (_, phantom, spec) = setup(3, 1, Mode::SingleSlice);
    let header = DatasetHeader::new(N, 4, &spec, 3);
    let mut writer = RtkWriter::create(&input, header.clone()).unwrap();
    for frame in interleaved(phantom, spec, 3, 1) {
        writer.write_frame(&frame.unwrap()).unwrap();
    }
    writer.finish().unwrap();
    assert_eq!(RtkReader::open(&input).unwrap().header(), &header);

    let summary = reconstruct_file(&input, &output, |h| {
        PipelineConfig::new(ReconPlan::with_gamma(h.n, 1.5)?, h)
    })
    .unwrap();
    assert_eq!(summary.images_written, 3);
    let images = read_images(&output).unwrap();
    assert_eq!(images.len(), 3);
    assert!(images.iter().all(|i| i.pixels.iter().all(|p| p.is_finite())));
}
