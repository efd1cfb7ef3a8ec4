use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rtnlinv::decomp::WorkerGroup;
use rtnlinv::fft::{Fft2, FftUse};
use rtnlinv::nlinv::{NlinvOp, Solver};
use rtnlinv::preproc::{build_psf, grid_adjoint};
use rtnlinv::C32;
use rtnlinv_bench::{Fixture, CHANNELS};

const SIZES: [usize; 2] = [32, 64];

fn normal_operator(c: &mut Criterion) {
    let mut group = c.benchmark_group("apply_normal");
    for n in SIZES {
        let fx = Fixture::new(n);
        let op = NlinvOp::new(&fx.plan);
        for workers in [1, 2, 4] {
            let wg = WorkerGroup::new(CHANNELS, workers).unwrap();
            let mut cache = op.prepare(&fx.init, &wg);
            let mut out = fx.init.clone();
            group.bench_with_input(BenchmarkId::new(format!("n{n}"), workers), &workers, |b, _| {
                b.iter(|| op.apply_normal_into(&fx.init, &mut cache, &fx.psf, &wg, &mut out).unwrap())
            });
        }
    }
    group.finish();
}

fn psf_apply(c: &mut Criterion) {
    let mut group = c.benchmark_group("psf_apply");
    for n in SIZES {
        let fx = Fixture::new(n);
        let x = fx.data.channel(0).to_vec();
        group.bench_function(BenchmarkId::from_parameter(n), |b| b.iter(|| fx.psf.apply(&x)));
    }
    group.finish();
}

fn preprocessing(c: &mut Criterion) {
    let mut group = c.benchmark_group("preprocessing");
    group.sample_size(10);
    for n in SIZES {
        let fx = Fixture::new(n);
        group.bench_function(BenchmarkId::new("grid_adjoint", n), |b| {
            b.iter(|| grid_adjoint(&fx.frame, &fx.plan).unwrap())
        });
        group.bench_function(BenchmarkId::new("build_psf", n), |b| {
            b.iter(|| build_psf(&fx.frame.spoke_angles, fx.frame.samples_per_spoke, &fx.plan).unwrap())
        });
    }
    group.finish();
}

fn newton_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("frame");
    group.sample_size(10);
    let fx = Fixture::new(32);
    let solver = Solver::new(&fx.plan, CHANNELS, 1).unwrap();
    let reg = Arc::new(fx.init.clone());
    group.bench_function("reconstruct_n32", |b| {
        b.iter(|| {
            solver
                .reconstruct(0, &fx.data, &fx.psf, fx.init.clone(), reg.clone())
                .unwrap()
        })
    });
    group.finish();
}

fn fft_sizes(c: &mut Criterion) {
    let mut group = c.benchmark_group("fft2");
    for g in [96usize, 128, 160, 192] {
        let fft = Fft2::new(g);
        let mut buf = vec![C32::new(1.0, 0.5); g * g];
        let mut scratch = fft.make_scratch();
        group.bench_function(BenchmarkId::from_parameter(g), |b| {
            b.iter(|| fft.forward(&mut buf, &mut scratch, FftUse::Other))
        });
    }
    group.finish();
}

criterion_group!(benches, normal_operator, psf_apply, preprocessing, newton_step, fft_sizes);
criterion_main!(benches);
