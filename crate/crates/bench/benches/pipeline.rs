use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lamp_core::harness::{prepare, select_patches, PipelineConfig};
use lamp_core::net::{forward, ExtractorKind, ModelConfig, ModelParams};
use lamp_core::pattern::{gaussian_w2, Gaussian2};
use lamp_core::selector::Solver;
use lamp_core::synth::{random_scene, toy_item};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn wasserstein(c: &mut Criterion) {
    let a = Gaussian2::new([0.5, -1.0], [[2.0, 0.4], [0.4, 1.5]]).unwrap();
    let b = Gaussian2::new([3.0, 2.0], [[0.7, -0.2], [-0.2, 3.1]]).unwrap();
    c.bench_function("gaussian_w2", |bench| bench.iter(|| gaussian_w2(black_box(&a), black_box(&b))));
}

fn selection(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let img = random_scene(&mut rng, 128, 128);
    let mut group = c.benchmark_group("select_patches_128");
    for solver in [Solver::Greedy, Solver::LocalSearch, Solver::Exhaustive] {
        let cfg = PipelineConfig { solver, ..PipelineConfig::desk() };
        group.bench_with_input(BenchmarkId::from_parameter(format!("{solver:?}")), &cfg, |bench, cfg| {
            bench.iter(|| select_patches(black_box(&img), cfg).unwrap())
        });
    }
    group.finish();
}

fn network(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let item = toy_item(&mut rng, true, true);
    let mut group = c.benchmark_group("forward");
    for kind in [ExtractorKind::Handcrafted, ExtractorKind::TinyConv] {
        let params = ModelParams::new(ModelConfig::desk(kind), 3).unwrap();
        let prep = prepare(&item.image, &item.detections, &PipelineConfig::desk(), 32).unwrap();
        group.bench_function(format!("{kind:?}"), |bench| {
            bench.iter(|| forward(black_box(&prep.patches), &prep.layout, &params).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, wasserstein, selection, network);
criterion_main!(benches);
