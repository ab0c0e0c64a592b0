use criterion::{criterion_group, criterion_main, Criterion};
use kvaf_fusion::loss::loss_and_grad;
use kvaf_fusion::par::{self, Exec};
use kvaf_fusion::train::{build_samples, moving_square_dataset, train_toy, Stage, TrainConfig};
use kvaf_fusion::FusionParams;
use std::hint::black_box;

fn per_sample_gradients(c: &mut Criterion) {
    let cfg = TrainConfig {
        episodes: 8,
        ..Default::default()
    };
    let data = moving_square_dataset(cfg.episodes, cfg.frames, cfg.size, cfg.square, 0).unwrap();
    let samples = build_samples(&data, cfg.model.block, 0).unwrap();
    let params = FusionParams::init(&cfg.model).unwrap();
    let mut group = c.benchmark_group("per_sample_gradients");
    group.sample_size(10);
    for (name, exec) in [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)] {
        group.bench_function(name, |b| {
            b.iter(|| black_box(par::map(exec, &samples, |s| loss_and_grad(&params, &cfg.model, s).unwrap().0.total)))
        });
    }
    group.finish();
}

fn train_steps(c: &mut Criterion) {
    let cfg = TrainConfig {
        steps: 5,
        episodes: 8,
        ..Default::default()
    };
    let data = moving_square_dataset(cfg.episodes, cfg.frames, cfg.size, cfg.square, 0).unwrap();
    let mut group = c.benchmark_group("train_5_steps");
    group.sample_size(10);
    for (name, exec) in [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)] {
        group.bench_function(name, |b| {
            b.iter(|| black_box(train_toy(&data, &cfg, Stage::Full, exec).unwrap().final_loss))
        });
    }
    group.finish();
}

criterion_group!(benches, per_sample_gradients, train_steps);
criterion_main!(benches);
