use std::hint::black_box;

use adw_core::evalharness::{
    auroc, roc_curve, run_protocol, select_threshold, ProtocolConfig, SyntheticGaussianFactory,
    ThresholdCriterion,
};
use adw_core::features::Mask;
use adw_core::synthdisc::{synth_local_features, SynthLocalConfig};
use adw_core::toy::label_only_manifest;
use adw_core::{Label, PositionGrid, RngStream};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn scores(n: usize) -> (Vec<f64>, Vec<Label>) {
    let mut rng = RngStream::new(3);
    let labels: Vec<Label> = (0..n)
        .map(|i| {
            if i % 4 == 0 {
                Label::Anomalous
            } else {
                Label::Nominal
            }
        })
        .collect();
    let s = labels
        .iter()
        .map(|l| rng.normal() + if l.is_anomalous() { 1.5 } else { 0.0 })
        .collect();
    (s, labels)
}

fn roc(c: &mut Criterion) {
    let mut group = c.benchmark_group("roc");
    for n in [100, 10_000] {
        let (s, l) = scores(n);
        group.bench_with_input(BenchmarkId::new("auroc", n), &n, |b, _| {
            b.iter(|| auroc(black_box(&s), &l).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("youden", n), &n, |b, _| {
            b.iter(|| {
                let curve = roc_curve(black_box(&s), &l).unwrap();
                select_threshold(&curve, ThresholdCriterion::Youden).unwrap()
            })
        });
    }
    group.finish();
}

fn protocol(c: &mut Criterion) {
    let manifest = label_only_manifest(150, 100, 1);
    let cfg = ProtocolConfig {
        folds: 10,
        bootstrap_resamples: 500,
        ..ProtocolConfig::default()
    };
    let factory = SyntheticGaussianFactory::default();
    c.bench_function("protocol_k10_synthetic", |b| {
        b.iter(|| run_protocol(&manifest, &factory, black_box(&cfg)).unwrap())
    });
}

fn local_synthesis(c: &mut Criterion) {
    let mut rng = RngStream::new(4);
    let grid =
        PositionGrid::new(32, 32, 8, (0..32 * 32 * 8).map(|_| rng.normal()).collect()).unwrap();
    let fg = Mask::from_fn(32, 32, |r, col| {
        (4..28).contains(&r) && (6..26).contains(&col)
    });
    let cfg = SynthLocalConfig::default();
    c.bench_function("synth_local_features_32", |b| {
        let mut rng = RngStream::new(5);
        b.iter(|| synth_local_features(black_box(&grid), &fg, &cfg, &mut rng).unwrap())
    });
}

criterion_group!(benches, roc, protocol, local_synthesis);
criterion_main!(benches);
