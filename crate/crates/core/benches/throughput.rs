use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use leafvit::cnn::{self, ArchitectureSpec, CnnWeights, Mode};
use leafvit::par::Parallelism;
use leafvit::preprocess::NormalizedImage;
use leafvit::rng::SplitMix64;
use leafvit::vit::{self, FeatureVector, Variant, ViTConfig};

const MODES: [(&str, Parallelism); 2] = [("sequential", Parallelism::Sequential), ("parallel", Parallelism::Parallel)];

fn images(n: usize, size: usize) -> Vec<NormalizedImage> {
    let mut rng = SplitMix64::new(1);
    (0..n)
        .map(|_| NormalizedImage::new(size, size, (0..size * size * 3).map(|_| rng.next_f64()).collect()).unwrap())
        .collect()
}

fn features(n: usize, len: usize, classes: usize) -> Vec<FeatureVector> {
    let mut rng = SplitMix64::new(2);
    (0..n)
        .map(|i| FeatureVector::new((0..len).map(|_| rng.uniform(-1.0, 1.0)).collect()).with_label((i % classes) as u32))
        .collect()
}

fn extraction(c: &mut Criterion) {
    let cfg = ViTConfig { variant: Variant::Tail { k: 1024 }, ..ViTConfig::default() };
    let w = vit::init_weights(&cfg).unwrap();
    let batch = images(16, cfg.image_size);
    let mut g = c.benchmark_group("extract_batch");
    g.sample_size(10);
    for (name, mode) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &mode, |b, &mode| {
            b.iter(|| vit::extract_batch(&batch, &cfg, &w, mode).unwrap())
        });
    }
    g.finish();
}

fn training_step(c: &mut Criterion) {
    let spec = ArchitectureSpec::arch1(4);
    let set = features(32, 1024, 4);
    let w = CnnWeights::init(&spec, 1024, 3).unwrap();
    let batch: Vec<(&FeatureVector, usize)> = set.iter().map(|f| (f, f.label.unwrap() as usize)).collect();
    let mut g = c.benchmark_group("backward");
    g.sample_size(10);
    for (name, mode) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &mode, |b, &mode| {
            b.iter(|| cnn::backward_with(&batch, &spec, &w, Mode::Train { seed: 7 }, mode).unwrap())
        });
    }
    g.finish();
}

fn prediction(c: &mut Criterion) {
    let spec = ArchitectureSpec::arch2(4);
    let set = features(32, 1024, 4);
    let w = CnnWeights::init(&spec, 1024, 3).unwrap();
    let mut g = c.benchmark_group("predict_many");
    g.sample_size(10);
    for (name, mode) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &mode, |b, &mode| {
            b.iter(|| cnn::predict_many(&set, &spec, &w, mode).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, extraction, training_step, prediction);
criterion_main!(benches);
