use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use kvaf_core::fixtures;
use kvaf_core::kinematics::parse_urdf;
use kvaf_core::par::Exec;
use kvaf_core::render::{render_episode_with, RenderConfig};
use kvaf_core::roundtrip::{roundtrip_episode, RoundtripConfig};
use kvaf_core::synth::synth_trajectory;
use std::hint::black_box;

fn bench(c: &mut Criterion) {
    let chain = parse_urdf(fixtures::BIMANUAL_URDF).unwrap();
    let ep = synth_trajectory(&chain, 32, 0).unwrap();
    let render_cfg = RenderConfig::default();
    let rt_cfg = RoundtripConfig::defaults();

    let mut g = c.benchmark_group("render_episode");
    g.sample_size(10);
    for (name, exec) in [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)] {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| black_box(render_episode_with(&ep, &chain, &render_cfg, 0.05, exec).unwrap()))
        });
    }
    g.finish();

    let mut g = c.benchmark_group("roundtrip");
    g.sample_size(10);
    for (name, exec) in [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)] {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| black_box(roundtrip_episode(&chain, &ep, &rt_cfg, exec).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
