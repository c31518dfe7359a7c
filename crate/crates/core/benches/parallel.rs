//! Hot loops at one worker and at the default pool size. Build with
//! `--no-default-features` to measure the sequential fallback.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use regolith_core::par;
use regolith_core::radiance::{rasterize, SplatScene};
use regolith_core::sfm::{
    detect_features, match_all, propose_pairs, DetectorConfig, PairStrategy, DEFAULT_MATCH_RATIO,
};
use regolith_core::synthetic::{fixture_dataset, fixture_scene, strip_scene, ObservationNoise, StripLayout};

fn thread_counts() -> Vec<usize> {
    let max = par::with_threads(0, par::current_threads);
    if max > 1 {
        vec![1, max]
    } else {
        vec![1]
    }
}

fn matching(c: &mut Criterion) {
    let scene = strip_scene(&StripLayout::plain(60), &ObservationNoise::default(), 7);
    let pairs = propose_pairs(60, &PairStrategy::Exhaustive, None).expect("valid strategy");
    let mut g = c.benchmark_group("match_all");
    g.sample_size(10);
    for t in thread_counts() {
        g.bench_with_input(BenchmarkId::from_parameter(t), &t, |b, &t| {
            b.iter(|| par::with_threads(t, || match_all(&scene.features, &pairs, DEFAULT_MATCH_RATIO)))
        });
    }
    g.finish();
}

fn features(c: &mut Criterion) {
    let ds = fixture_dataset();
    let cfg = DetectorConfig::default();
    let mut g = c.benchmark_group("detect_features");
    g.sample_size(10);
    for t in thread_counts() {
        g.bench_with_input(BenchmarkId::from_parameter(t), &t, |b, &t| {
            b.iter(|| par::with_threads(t, || par::map(&ds.frames, |f| detect_features(&f.image, &cfg))))
        });
    }
    g.finish();
}

fn render(c: &mut Criterion) {
    let (scene, intr, poses): (SplatScene, _, _) = fixture_scene();
    let mut g = c.benchmark_group("rasterize");
    for t in thread_counts() {
        g.bench_with_input(BenchmarkId::from_parameter(t), &t, |b, &t| {
            b.iter(|| par::with_threads(t, || rasterize(&scene, &poses[0], &intr, None).expect("renders")))
        });
    }
    g.finish();
}

criterion_group!(benches, matching, features, render);
criterion_main!(benches);
