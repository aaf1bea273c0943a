use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use ovtad::detdecode::{decode_centernet, nms};
use ovtad::metrics::{evaluate, EvalConfig, Preset};
use ovtad::trainmath::{hungarian, render_targets, TrainConstants};
use ovtad::Segment;
use ovtad_bench::{cost_matrix, detections, eval_instance};

fn bench_hungarian(c: &mut Criterion) {
    let mut group = c.benchmark_group("hungarian");
    for &(n, m) in &[(7, 7), (64, 16), (100, 100)] {
        let costs = cost_matrix(n, m, 1);
        group.bench_with_input(BenchmarkId::from_parameter(format!("{n}x{m}")), &costs, |b, costs| {
            b.iter(|| hungarian(black_box(costs)))
        });
    }
    group.finish();
}

fn bench_nms(c: &mut Criterion) {
    let mut group = c.benchmark_group("nms");
    for &n in &[64usize, 512, 2048] {
        let dets = detections(n, 300.0, 2);
        group.bench_with_input(BenchmarkId::from_parameter(n), &dets, |b, dets| {
            b.iter(|| nms(black_box(dets), 0.6, false).unwrap())
        });
    }
    group.finish();
}

fn bench_decode(c: &mut Criterion) {
    let gt: Vec<Segment> = (0..40).map(|i| Segment::new(i as f64 * 20.0, i as f64 * 20.0 + 8.0).unwrap()).collect();
    let heads = render_targets("v", &gt, 800, 1.0, &TrainConstants::default()).unwrap().heads;
    c.bench_function("decode_centernet/800", |b| b.iter(|| decode_centernet(black_box(&heads), 512, 2, None).unwrap()));
}

fn bench_metrics(c: &mut Criterion) {
    let (preds, gt) = eval_instance(500, 5, 20, 3);
    let config = EvalConfig::preset(Preset::Activitynet, (0..20).map(|i| format!("class_{i}")).collect());
    c.bench_function("evaluate/500 videos", |b| b.iter(|| evaluate(black_box(&preds), black_box(&gt), &config).unwrap()));
}

criterion_group!(benches, bench_hungarian, bench_nms, bench_decode, bench_metrics);
criterion_main!(benches);
