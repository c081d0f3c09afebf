use std::hint::black_box;

use cepc::coordination::train_single_source_model;
use cepc::data::{synthetic_split, DomainShape, SynthSpec};
use cepc::losses::coral_loss;
use cepc::nn::{init_params, Matrix, Mlp, NetSpec};
use cepc::reliability::{source_covariance, target_costs, DiscriminatorConfig, ReliabilityTable, ScoreMode, SourceEncodings};
use cepc::trainer::{RunStreams, TrainConfig};
use cepc::RngStream;
use criterion::{criterion_group, criterion_main, Criterion};
use rand::Rng;

fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut r = RngStream::new(seed, "bench").rng();
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| r.random_range(-1.0f32..1.0)).collect()).unwrap()
}

fn coral(c: &mut Criterion) {
    let s = random(50, 32, 1);
    let t = random(50, 32, 2);
    c.bench_function("coral_loss 50x32", |b| b.iter(|| coral_loss(black_box(&s), black_box(&t)).unwrap()));
}

fn mlp(c: &mut Criterion) {
    let spec = NetSpec::classifier(32, 64, 2);
    let net: Mlp = init_params(&spec, &RngStream::new(3, "net")).unwrap();
    let x = random(50, 32, 4);
    let up = random(50, 2, 5);
    c.bench_function("classifier forward 50x32", |b| b.iter(|| net.forward(black_box(&x)).unwrap()));
    let trace = net.forward(&x).unwrap();
    c.bench_function("classifier backward 50x32", |b| {
        b.iter(|| net.backward(black_box(&trace), black_box(&up), true).unwrap())
    });
}

fn reliability(c: &mut Criterion) {
    let sources: Vec<Matrix> = (0..3).map(|i| random(2000, 32, 10 + i)).collect();
    let target = random(2000, 32, 20);
    let stats = source_covariance(&sources[0]).unwrap();
    c.bench_function("target_costs 2000x32", |b| b.iter(|| target_costs(black_box(&target), &stats).unwrap()));

    let encodings: Vec<SourceEncodings> = sources
        .iter()
        .map(|s| SourceEncodings {
            cost_source: s,
            cost_target: &target,
            capacity_source: s,
            capacity_target: &target,
        })
        .collect();
    let ids: Vec<String> = (0..2000).map(|i| format!("t{i}")).collect();
    let names: Vec<String> = (0..3).map(|i| format!("s{i}")).collect();
    let mut group = c.benchmark_group("reliability");
    group.sample_size(10);
    group.bench_function("table 3 sources x 2000 docs", |b| {
        b.iter(|| {
            ReliabilityTable::compute(ids.clone(), names.clone(), &encodings, DiscriminatorConfig::default(), ScoreMode::Full)
                .unwrap()
        })
    });
    group.finish();
}

fn training(c: &mut Criterion) {
    let spec = SynthSpec {
        domains: vec![
            DomainShape::default(),
            DomainShape { shift: 1.0, ..DomainShape::default() },
            DomainShape::default(),
        ],
        docs_per_domain: 2000,
        dim: 32,
        positive_rate: 0.2,
        separation: 2.0,
        noise: 1.0,
        seed: 1,
    };
    let (sources, target) = synthetic_split(&spec).unwrap();
    let cfg = TrainConfig { epochs: 1, ..TrainConfig::default() };
    let mut group = c.benchmark_group("training");
    group.sample_size(10);
    group.bench_function("single-source epoch 2000x32", |b| {
        b.iter(|| train_single_source_model(&sources[0], &target.data, 0.1, &cfg, &RunStreams::for_source(0, 0)).unwrap())
    });
    group.finish();
}

criterion_group!(benches, coral, mlp, reliability, training);
criterion_main!(benches);
