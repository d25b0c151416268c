use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use duet_bench::*;
use duet_core::metrics::features::{crossdist_features, graphical_features, kinematic_features};
use duet_core::metrics::fid::fid;
use duet_core::metrics::beats::{bas, motion_beats};
use duet_core::Skeleton;

fn quantize(c: &mut Criterion) {
    let mut g = c.benchmark_group("quantize");
    for dim in [32usize, 64, 512] {
        let book = codebook(512, dim);
        let q = queries(256, dim);
        g.bench_with_input(BenchmarkId::new("k512_batch256", dim), &dim, |b, _| {
            b.iter(|| book.quantize_all(black_box(&q)).unwrap())
        });
    }
    g.finish();
}

fn frechet(c: &mut Criterion) {
    let mut g = c.benchmark_group("fid");
    for dim in [18usize, 66] {
        let a = feature_set(200, dim, 0.0);
        let b = feature_set(200, dim, 0.1);
        g.bench_with_input(BenchmarkId::new("n200", dim), &dim, |bch, _| bch.iter(|| fid(black_box(&a), black_box(&b)).unwrap()));
    }
    g.finish();
}

fn features(c: &mut Criterion) {
    let skel = Skeleton::smpl22();
    let d = duet();
    let seg = d.slice(0, 100);
    let pos = positions(&seg.follower);
    c.bench_function("kinematic_100f", |b| b.iter(|| kinematic_features(black_box(&pos), 20.0)));
    c.bench_function("graphical_100f", |b| b.iter(|| graphical_features(black_box(&seg.follower), &skel, 20.0)));
    c.bench_function("crossdist_100f", |b| b.iter(|| crossdist_features(&seg.leader, black_box(&seg.follower), &skel)));
    let music = seg.beats.clone().unwrap_or_default();
    c.bench_function("bas_100f", |b| {
        b.iter(|| {
            let mb = motion_beats(black_box(&pos), 20.0);
            bas(&mb, &music, 0.15).unwrap()
        })
    });
}

fn lm_forward(c: &mut Criterion) {
    let lm = desk_lm(1600, 80);
    let mut g = c.benchmark_group("lm_forward");
    g.sample_size(20);
    for len in [32usize, 131] {
        let ids: Vec<u32> = (0..len as u32).map(|i| (i * 7) % 1600).collect();
        let x = candle_core::Tensor::from_vec(ids, (1, len), &candle_core::Device::Cpu).unwrap();
        g.bench_with_input(BenchmarkId::new("desk", len), &len, |b, _| b.iter(|| lm.forward(black_box(&x)).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, quantize, frechet, features, lm_forward);
criterion_main!(benches);
