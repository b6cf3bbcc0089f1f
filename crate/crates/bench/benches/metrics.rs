use std::hint::black_box;

use amodal_bench::{scene, tracked_results};
use amodal_core::metrics::{detection_ap, evaluate, track_ap};
use amodal_core::EvalConfig;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn evaluation(c: &mut Criterion) {
    let mut group = c.benchmark_group("evaluate");
    for videos in [5, 20] {
        let ds = scene(videos, 30);
        let results = tracked_results(&ds);
        let cfg = EvalConfig::default();
        group.bench_with_input(BenchmarkId::new("full", videos), &videos, |b, _| {
            b.iter(|| evaluate(black_box(&ds), black_box(&results), &cfg).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("detection", videos), &videos, |b, _| {
            b.iter(|| detection_ap(black_box(&ds), black_box(&results), &cfg).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("track", videos), &videos, |b, _| {
            b.iter(|| track_ap(black_box(&ds), black_box(&results), &cfg).unwrap())
        });
    }
    group.finish();

    let ds = scene(5, 30);
    let results = tracked_results(&ds);
    let sweep = EvalConfig {
        iou_thresholds: EvalConfig::sweep_thresholds(),
        ..Default::default()
    };
    c.bench_function("evaluate/sweep/5", |b| b.iter(|| evaluate(&ds, black_box(&results), &sweep).unwrap()));
}

criterion_group!(benches, evaluation);
criterion_main!(benches);
