//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rtnlinv::autotune::{legal_configs, ProtocolKey, TuningDb, TuningRecord};
use rtnlinv::decomp::{run_series, TemporalSchedule, WorkerGroup};
use rtnlinv::fft::{Fft2, FftCounter};
use rtnlinv::ingest::{DatasetHeader, ImageKind, Mode};
use rtnlinv::metrics::{nrmse, nrmse_scaled};
use rtnlinv::nlinv::{cg_solve, scale_to_norm, Estimate, NewtonState, NlinvOp, Solver};
use rtnlinv::pipeline::{run_pipeline, simulate_pipeline, PipelineConfig};
use rtnlinv::planner::{coil_grid, select_grid, FftLookupTable, GAMMA_MAX, GAMMA_MIN};
use rtnlinv::preproc::{build_psf, fov_mask, grid_adjoint, radial_dcf, GriddedData, Gridder, PsfKernel};
use rtnlinv::seqsim::{
    coil_sensitivity, radial_coords, simulate_frame, Motion, PhantomSpec, TrajectorySpec,
};
use rtnlinv::{ReconPlan, C32};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_vec(r: &mut ChaCha8Rng, n: usize) -> Vec<C32> {
    (0..n)
        .map(|_| C32::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)))
        .collect()
}

fn random_estimate(r: &mut ChaCha8Rng, plan: &ReconPlan, channels: usize) -> Estimate {
    let mut e = Estimate::zeros_for(plan, channels);
    e.rho = random_vec(r, e.rho.len());
    e.coils = random_vec(r, e.coils.len());
    e
}

fn dot(a: &[C32], b: &[C32]) -> Complex64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let p = x.conj() * y;
            Complex64::new(p.re as f64, p.im as f64)
        })
        .sum()
}

/// `<a, b>` over both parts of an estimate.
fn est_dot(a: &Estimate, b: &Estimate) -> Complex64 {
    dot(&a.rho, &b.rho) + dot(&a.coils, &b.coils)
}

fn rel_gap(x: Complex64, y: Complex64) -> f64 {
    (x - y).norm() / x.norm().max(y.norm())
}

/// Reference `|object| * rss(coils)` and reconstruction magnitudes on the
/// disc of radius `0.45 N`.
fn interior(phantom: &PhantomSpec, frame: usize, n: usize, image: &[C32]) -> (Vec<f64>, Vec<f64>) {
    let obj = phantom.object_image(frame, n);
    let half = n as f64 / 2.0;
    let (mut reference, mut got) = (Vec::new(), Vec::new());
    for i in 0..n * n {
        let p = [(i % n) as f64 - half, (i / n) as f64 - half];
        if p[0].hypot(p[1]) >= 0.45 * n as f64 {
            continue;
        }
        let rss = (0..phantom.coils)
            .map(|j| coil_sensitivity(phantom, j, p).norm_sqr())
            .sum::<f64>()
            .sqrt();
        reference.push(obj[i].norm() * rss);
        got.push(image[i].norm() as f64);
    }
    (reference, got)
}

fn static_head(n: usize, coils: usize) -> PhantomSpec {
    PhantomSpec {
        motion: Motion::Static,
        ..PhantomSpec::dynamic_head(n as f64, coils)
    }
}

/// Gridded, scaled frames of one series; the first frame sets the scale.
fn prepare_series(
    phantom: &PhantomSpec,
    spec: &TrajectorySpec,
    plan: &ReconPlan,
    frames: usize,
) -> Vec<(GriddedData, Arc<PsfKernel>)> {
    let mut scale = None;
    (0..frames)
        .map(|f| {
            let frame = simulate_frame(phantom, spec, f).unwrap();
            let mut z = grid_adjoint(&frame, plan).unwrap();
            match scale {
                None => scale = Some(scale_to_norm(&mut z, plan.data_norm)),
                Some(s) => z.scale(s),
            }
            let psf = build_psf(&frame.spoke_angles, frame.samples_per_spoke, plan).unwrap();
            (z, Arc::new(psf))
        })
        .collect()
}

fn criterion_1() -> Outcome {
    let t0 = Instant::now();
    let mut r = rng(1);
    let mut worst = [0.0f64; 3];
    let mut trials = 0;
    for &g in &[16usize, 32] {
        for &j in &[1usize, 3] {
            let plan = ReconPlan::with_grid(g / 4, g).unwrap();
            let op = NlinvOp::new(&plan);
            let group = WorkerGroup::new(j, 1).unwrap();
            let spec = TrajectorySpec::new(5, 1, g);
            let angles = spec.frame_angles(0);
            let psf = build_psf(&angles, g, &plan).unwrap();
            let gridder = Gridder::new(&radial_coords(&angles, g), g).unwrap();
            let fft = Fft2::new(g);
            for _ in 0..25 {
                trials += 1;
                let x = random_estimate(&mut r, &plan, j);
                let mut cache = op.prepare(&x, &group);
                let a = random_estimate(&mut r, &plan, j);
                let b = random_estimate(&mut r, &plan, j);
                let na = op.apply_normal(&a, &mut cache, &psf, &group).unwrap();
                let nb = op.apply_normal(&b, &mut cache, &psf, &group).unwrap();
                worst[0] = worst[0].max(rel_gap(est_dot(&a, &nb), est_dot(&na, &b)));

                let chat = random_vec(&mut r, plan.gc * plan.gc);
                let v = random_vec(&mut r, g * g);
                let lhs = dot(&op.apply_w_inv(&chat), &v);
                let rhs = dot(&chat, &op.apply_w_inv_h(&v));
                worst[1] = worst[1].max(rel_gap(lhs, rhs));

                let img: Vec<C32> = random_vec(&mut r, g * g)
                    .into_iter()
                    .zip(fov_mask(g))
                    .map(|(v, m)| if m { v } else { C32::default() })
                    .collect();
                let y = random_vec(&mut r, gridder.samples());
                let lhs = dot(&gridder.forward(&img, &fft), &y);
                let rhs = dot(&img, &gridder.adjoint(&y, &fft));
                worst[2] = worst[2].max(rel_gap(lhs, rhs));
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let detail = format!(
        "{trials} trials, max relative gap: normal {:.2e}, W^-1 {:.2e}, gridding {:.2e}, {secs:.1} s",
        worst[0], worst[1], worst[2]
    );
    check(worst.iter().all(|&w| w <= 1e-4) && secs < 30.0, detail)
}

/// `sum_k D_k e^{2 pi i k.r'} sum_r x(r) e^{-2 pi i k.r}` on the FOV.
fn nudft_normal(x: &[C32], g: usize, coords: &[[f64; 2]], dcf: &[f64]) -> Vec<Complex64> {
    let mask = fov_mask(g);
    let pts: Vec<(usize, f64, f64)> = (0..g * g)
        .filter(|&i| mask[i])
        .map(|i| (i, (i % g) as f64 - (g / 2) as f64, (i / g) as f64 - (g / 2) as f64))
        .collect();
    let mut out = vec![Complex64::default(); g * g];
    for (k, &w) in coords.iter().zip(dcf) {
        if w == 0.0 {
            continue;
        }
        let y: Complex64 = pts
            .iter()
            .map(|&(i, px, py)| {
                let v = Complex64::new(x[i].re as f64, x[i].im as f64);
                v * Complex64::from_polar(1.0, -2.0 * PI * (k[0] * px + k[1] * py))
            })
            .sum();
        for &(i, px, py) in &pts {
            out[i] += w * y * Complex64::from_polar(1.0, 2.0 * PI * (k[0] * px + k[1] * py));
        }
    }
    out
}

fn criterion_2() -> Outcome {
    let t0 = Instant::now();
    let mut r = rng(2);
    let mut worst = 0.0f64;
    for &g in &[16usize, 32] {
        let plan = ReconPlan::with_grid(g / 4, g).unwrap();
        for &k in &[1usize, 5, 11] {
            let spec = TrajectorySpec::new(k, 1, g);
            let angles = spec.frame_angles(0);
            let coords = radial_coords(&angles, g);
            let dcf = radial_dcf(k, g);
            let psf = build_psf(&angles, g, &plan).unwrap();
            let x = random_vec(&mut r, g * g);
            let got = psf.apply(&x);
            let want = nudft_normal(&x, g, &coords, &dcf);
            let err: f64 = got
                .iter()
                .zip(&want)
                .map(|(a, b)| (Complex64::new(a.re as f64, a.im as f64) - b).norm_sqr())
                .sum::<f64>()
                .sqrt();
            let scale = want.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
            worst = worst.max(err / scale);
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    check(
        worst <= 1e-4 && secs < 60.0,
        format!("max relative error {worst:.2e} over G in {{16,32}}, K in {{1,5,11}}, {secs:.1} s"),
    )
}

fn criterion_3() -> Outcome {
    let g = 16;
    let j = 2;
    let plan = ReconPlan::with_grid(g / 4, g).unwrap();
    let op = NlinvOp::new(&plan);
    let group = WorkerGroup::new(j, 1).unwrap();
    let angles = TrajectorySpec::new(5, 1, g).frame_angles(0);
    let psf = build_psf(&angles, g, &plan).unwrap();
    let mut r = rng(3);
    let x = random_estimate(&mut r, &plan, j);
    let mut cache = op.prepare(&x, &group);
    let alpha = 0.5;

    let nr = g * g;
    let dim = nr + j * plan.gc * plan.gc;
    let unpack = |v: &[C32]| {
        let mut e = Estimate::zeros_for(&plan, j);
        e.rho.copy_from_slice(&v[..nr]);
        e.coils.copy_from_slice(&v[nr..]);
        e
    };
    let pack = |e: &Estimate| -> Vec<C32> { e.rho.iter().chain(&e.coils).copied().collect() };

    let mut m = DMatrix::<Complex64>::zeros(dim, dim);
    for col in 0..dim {
        let mut basis = vec![C32::default(); dim];
        basis[col] = C32::new(1.0, 0.0);
        let out = op.apply_normal(&unpack(&basis), &mut cache, &psf, &group).unwrap();
        for (row, v) in pack(&out).iter().enumerate() {
            m[(row, col)] = Complex64::new(v.re as f64, v.im as f64);
        }
        m[(col, col)] += alpha;
    }
    let rhs_vec = random_vec(&mut r, dim);
    let b = DVector::from_iterator(dim, rhs_vec.iter().map(|v| Complex64::new(v.re as f64, v.im as f64)));
    let direct = m.lu().solve(&b).ok_or("dense system is singular")?;

    let rhs = unpack(&rhs_vec);
    let (sol, report) = cg_solve(&op, &mut cache, &psf, &group, &rhs, alpha, 1e-6, 1000, 0)
        .map_err(|e| e.to_string())?;
    let sol = pack(&sol);
    let err: f64 = sol
        .iter()
        .zip(direct.iter())
        .map(|(a, b)| (Complex64::new(a.re as f64, a.im as f64) - b).norm_sqr())
        .sum::<f64>()
        .sqrt();
    let rel = err / direct.norm();
    check(
        rel <= 1e-4,
        format!(
            "dim {dim}, {} CG iterations, relative difference to LU solve {rel:.2e}",
            report.iterations
        ),
    )
}

fn criterion_4() -> Outcome {
    // Fully sampled: K >= pi/2 N spokes.
    let n = 64;
    let plan = ReconPlan::with_gamma(n, 1.5).unwrap();
    let phantom = static_head(n, 4);
    let spec = TrajectorySpec::new(101, 1, 2 * n);
    let series = prepare_series(&phantom, &spec, &plan, 1);
    let (z, psf) = &series[0];
    let solver = Solver::new(&plan, 4, 1).map_err(|e| e.to_string())?;
    let init = Estimate::initial(&plan, 4);
    let res = solver
        .reconstruct(0, z, psf, init.clone(), Arc::new(init))
        .map_err(|e| e.to_string())?;
    let (reference, got) = interior(&phantom, 0, n, &res.image);
    let full = nrmse_scaled(&got, &reference);

    // Undersampled dynamic series.
    let n = 32;
    let plan = ReconPlan::with_gamma(n, 1.5).unwrap();
    let phantom = PhantomSpec::dynamic_head(n as f64, 4);
    let spec = TrajectorySpec::new(11, 5, 2 * n);
    let frames = 31;
    let series = prepare_series(&phantom, &spec, &plan, frames);
    let sched = TemporalSchedule::for_turns(5, plan.newton_steps).unwrap();
    let (temporal, _) = run_series(&plan, series.clone(), 1, 1, sched, None).map_err(|e| e.to_string())?;
    let solver = Solver::new(&plan, 4, 1).map_err(|e| e.to_string())?;
    let mut wins = 0;
    for f in 6..frames {
        let init = Estimate::initial(&plan, 4);
        let scratch = solver
            .reconstruct(f, &series[f].0, &series[f].1, init.clone(), Arc::new(init))
            .map_err(|e| e.to_string())?;
        let (reference, a) = interior(&phantom, f, n, &temporal[f].image);
        let (_, b) = interior(&phantom, f, n, &scratch.image);
        if nrmse_scaled(&a, &reference) < nrmse_scaled(&b, &reference) {
            wins += 1;
        }
    }
    let need = (0.9 * 25.0f64).ceil() as usize;
    check(
        full <= 0.05 && wins >= need,
        format!("fully sampled NRMSE {:.2}%, temporal beats per-frame on {wins}/25 frames", 100.0 * full),
    )
}

fn criterion_5() -> Outcome {
    let channels = 10;
    let mut plan = ReconPlan::with_gamma(16, 1.5).unwrap();
    plan.cg_tol = 0.0;
    let counter = FftCounter::new();
    let spec = TrajectorySpec::new(7, 1, 32);
    let phantom = static_head(16, channels);
    let series = prepare_series(&phantom, &spec, &plan, 1);
    let (z, psf) = &series[0];
    let x0 = Estimate::initial(&plan, channels);
    let mut state = NewtonState::new(0, x0.clone(), &plan);
    let mut iterations = 0;
    for cap in [8, 8, 8, 8, 9, 9] {
        plan.cg_max_iter = cap;
        let solver = Solver::with_group(&plan, WorkerGroup::new(channels, 1).unwrap(), Some(counter.clone()))
            .map_err(|e| e.to_string())?;
        let (report, _) = solver
            .newton_step(&mut state, z, psf, &x0)
            .map_err(|e| e.to_string())?;
        iterations += report.iterations;
    }
    let normal = counter.normal();
    check(
        iterations == 50 && normal == 2000,
        format!("J=10, 6 steps, {iterations} CG iterations: {normal} normal-operator channel FFTs"),
    )
}

fn criterion_6() -> Outcome {
    let rows = [
        (128usize, 384usize, 1.5),
        (144, 432, 1.5),
        (160, 486, 1.51875),
        (170, 512, 1.50588),
        (256, 784, 1.53125),
    ];
    let mut failures = Vec::new();
    for (n, g, gamma) in rows {
        // Runtime grows with size except for one fast transform at `g`.
        let table = FftLookupTable::from_entries((300..=1100).map(|s| (s, if s == g { 1.0 } else { s as f64 })));
        match select_grid(n, &table, GAMMA_MIN, GAMMA_MAX) {
            Ok((got, got_gamma)) if got == g && (got_gamma - gamma).abs() <= 1e-5 => {}
            other => failures.push(format!("N={n}: {other:?}")),
        }
    }
    for (g, gc) in [(384usize, 96usize), (432, 108), (486, 121), (512, 128), (784, 196)] {
        if coil_grid(g) != gc {
            failures.push(format!("G={g}: G_c={}", coil_grid(g)));
        }
    }
    check(
        failures.is_empty(),
        if failures.is_empty() {
            "5 grid rows and 5 coil-grid pairs reproduced".into()
        } else {
            failures.join("; ")
        },
    )
}

type Snk = Vec<(usize, usize, ImageKind, Vec<u32>)>;

fn pipeline_run(threads: usize, frames: usize) -> Result<(Snk, Vec<rtnlinv::decomp::AuditEntry>, TemporalSchedule), String> {
    let n = 32;
    let plan = ReconPlan::with_gamma(n, 1.5).unwrap();
    let phantom = PhantomSpec::dynamic_head(n as f64, 4);
    let spec = TrajectorySpec::new(11, 5, 2 * n);
    let header = DatasetHeader::new(n, 4, &spec, frames);
    let mut cfg = PipelineConfig::new(plan, &header).map_err(|e| e.to_string())?;
    cfg.threads = threads;
    let source = (0..frames).map(move |f| simulate_frame(&phantom, &spec, f));
    let out = Arc::new(Mutex::new(Vec::new()));
    let sink_out = out.clone();
    let summary = run_pipeline(&cfg, source, move |img| {
        let bits = img.pixels.iter().map(|p| p.to_bits()).collect();
        sink_out
            .lock()
            .unwrap()
            .push((img.frame_index, img.slice_id, img.kind, bits));
        Ok(())
    })
    .map_err(|e| e.to_string())?;
    let snk = std::mem::take(&mut *out.lock().unwrap());
    Ok((snk, summary.audit, cfg.schedule))
}

fn criterion_7() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;

    // Channel decomposition.
    let n = 32;
    let plan = ReconPlan::with_gamma(n, 1.5).unwrap();
    let phantom = PhantomSpec::dynamic_head(n as f64, 4);
    let spec = TrajectorySpec::new(11, 5, 2 * n);
    let series = prepare_series(&phantom, &spec, &plan, 1);
    let mut images = Vec::new();
    for a in [1usize, 2, 4] {
        let solver = Solver::new(&plan, 4, a).map_err(|e| e.to_string())?;
        let init = Estimate::initial(&plan, 4);
        let res = solver
            .reconstruct(0, &series[0].0, &series[0].1, init.clone(), Arc::new(init))
            .map_err(|e| e.to_string())?;
        images.push(res.image.iter().flat_map(|v| [v.re.to_bits(), v.im.to_bits()]).collect::<Vec<_>>());
    }
    let same_a = images.windows(2).all(|w| w[0] == w[1]);
    ok &= same_a;
    notes.push(format!("A in {{1,2,4}} bit-identical: {same_a}"));

    // Temporal decomposition through the pipeline.
    let frames = 12;
    let mut orders = Vec::new();
    let mut t1_bits = None;
    for t in [1usize, 2, 4] {
        let (snk, audit, sched) = pipeline_run(t, frames)?;
        let order: Vec<(usize, usize, ImageKind)> = snk.iter().map(|s| (s.0, s.1, s.2)).collect();
        orders.push(order);
        let final_prev = audit
            .iter()
            .filter(|a| a.frame > 0)
            .all(|a| a.final_from() == Some(a.frame - 1));
        let prefix_sequential = (1..=sched.l.min(frames - 1)).all(|f| audit[f].started > audit[f - 1].finished);
        ok &= final_prev && prefix_sequential && audit.len() == frames;
        notes.push(format!(
            "T={t}: final step from n-1 {final_prev}, frames 1..{} sequential {prefix_sequential}",
            sched.l
        ));
        if t == 1 {
            t1_bits = Some(snk);
        }
    }
    let expected: Vec<(usize, usize, ImageKind)> = (0..frames).map(|f| (f, 0, ImageKind::Magnitude)).collect();
    let ordered = orders.iter().all(|o| *o == expected);
    ok &= ordered;
    notes.push(format!("snk order preserved: {ordered}"));

    // Plain sequential solver: previous frame for initialization and
    // every regularization step.
    let series = prepare_series(&phantom, &spec, &plan, frames);
    let solver = Solver::new(&plan, 4, 1).map_err(|e| e.to_string())?;
    let mut prev = Arc::new(Estimate::initial(&plan, 4));
    let mut sequential = Vec::new();
    for (f, (z, psf)) in series.iter().enumerate() {
        let res = solver
            .reconstruct(f, z, psf, prev.as_ref().clone(), prev.clone())
            .map_err(|e| e.to_string())?;
        sequential.push(res.image.iter().map(|v| v.norm().to_bits()).collect::<Vec<_>>());
        prev = Arc::new(res.estimate);
    }
    let t1 = t1_bits.unwrap_or_default();
    let identical = t1.len() == frames && t1.iter().zip(&sequential).all(|(s, q)| s.3 == *q);
    ok &= identical;
    notes.push(format!("T=1 bit-identical to sequential: {identical}"));
    check(ok, notes.join(", "))
}

fn criterion_8() -> Outcome {
    let fixture = vec![
        (1, 1), (2, 1), (3, 1), (4, 1), (5, 1), (6, 1), (7, 1), (8, 1),
        (1, 2), (2, 2), (3, 2), (4, 2),
        (1, 3), (2, 3),
        (1, 4), (2, 4),
    ];
    let configs_ok = legal_configs(8) == fixture;

    let key = ProtocolKey::new(Mode::SingleSlice, 160, 200, 10);
    let mut db = TuningDb::in_memory();
    for (t, a, fps) in [(1usize, 1usize, 4.9), (3, 2, 18.1)] {
        db.append(TuningRecord::new(key, t, a, 1000.0 / fps)).unwrap();
    }
    let selected = db.select(&key);

    let mut learn = TuningDb::in_memory();
    let mut seen = Vec::new();
    for i in 0..16 {
        let (t, a) = learn.learn_step(&key, 8);
        seen.push((t, a));
        learn.append(TuningRecord::new(key, t, a, 100.0 + i as f64)).unwrap();
    }
    let distinct: BTreeSet<_> = seen.iter().copied().collect();
    let sweep_ok = seen.len() == 16 && distinct.len() == 16 && distinct == fixture.iter().copied().collect();
    check(
        configs_ok && selected == (3, 2) && sweep_ok,
        format!(
            "legal_configs(8) matches fixture: {configs_ok}, selected {selected:?}, sweep covered {} distinct configs",
            distinct.len()
        ),
    )
}

fn criterion_9() -> Outcome {
    let trace = simulate_pipeline(10, &[1.0; 5], Some(4));
    let ticks = trace.makespan();
    check(
        ticks == 14.0 && trace.prologue() == 4 && trace.epilogue() == 4,
        format!(
            "10 frames x 5 stages: {ticks} ticks, prologue {}, epilogue {}",
            trace.prologue(),
            trace.epilogue()
        ),
    )
}

fn criterion_10() -> Outcome {
    let n = 64;
    let phantom = PhantomSpec::dynamic_head(n as f64, 4);
    let spec = TrajectorySpec::new(11, 5, 2 * n);
    let cropped = ReconPlan::with_gamma(n, 1.5).unwrap();
    let mut full = cropped.clone();
    full.gc = full.g;
    let mut mags = Vec::new();
    for plan in [&cropped, &full] {
        let series = prepare_series(&phantom, &spec, plan, 1);
        let solver = Solver::new(plan, 4, 1).map_err(|e| e.to_string())?;
        let init = Estimate::initial(plan, 4);
        let res = solver
            .reconstruct(0, &series[0].0, &series[0].1, init.clone(), Arc::new(init))
            .map_err(|e| e.to_string())?;
        mags.push(res.image.iter().map(|v| v.norm() as f64).collect::<Vec<_>>());
    }
    let diff = nrmse(&mags[0], &mags[1]);
    check(
        diff <= 0.02,
        format!("G={} G_c={} vs G_c={}: NRMSE {:.3}%", cropped.g, cropped.gc, full.gc, 100.0 * diff),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("operator adjointness", criterion_1),
        ("Toeplitz kernel vs direct NUDFT", criterion_2),
        ("CG vs dense solve", criterion_3),
        ("phantom recovery", criterion_4),
        ("FFT accounting", criterion_5),
        ("planner fixtures", criterion_6),
        ("decomposition equivalence", criterion_7),
        ("autotune", criterion_8),
        ("pipeline clock model", criterion_9),
        ("coil grid cropping", criterion_10),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(d) => println!("acceptance {:>2} PASS  {name}: {d}", i + 1),
            Err(d) => {
                failed += 1;
                println!("acceptance {:>2} FAIL  {name}: {d}", i + 1);
            }
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
