use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use gazefocus::cluster::ward_linkage;
use gazefocus::fixation::detect_fixations;
use gazefocus::motion::{block_flow, BlockParams};
use gazefocus::tracklink::link_detections;
use gazefocus::SessionConfig;
use gazefocus_bench::{frame_pair, gaze, random_features, session};

fn ward(c: &mut Criterion) {
    let mut group = c.benchmark_group("ward");
    for n in [100, 400, 1000] {
        let features = random_features(1, n, 128);
        group.bench_with_input(BenchmarkId::from_parameter(n), &features, |b, f| {
            b.iter(|| ward_linkage(f).unwrap())
        });
    }
    group.finish();
}

fn linking(c: &mut Criterion) {
    let s = session(1, 120.0);
    let cfg = SessionConfig::default().linking;
    c.bench_function("link 120s session", |b| b.iter(|| link_detections(&s.detections, &cfg).unwrap()));
}

fn fixations(c: &mut Criterion) {
    let s = session(2, 120.0);
    c.bench_function("idt 120s of gaze", |b| {
        b.iter(|| detect_fixations(gaze(&s), 40.0, 100_000).unwrap())
    });
}

fn flow(c: &mut Criterion) {
    let params = BlockParams { block_size: 16, search_radius: 8 };
    let (a, f) = frame_pair(3, 320, 240, 3, -2);
    c.bench_function("block flow 320x240", |b| b.iter(|| block_flow(&a, &f, 0, &params).unwrap()));
}

criterion_group!(benches, ward, linking, fixations, flow);
criterion_main!(benches);
