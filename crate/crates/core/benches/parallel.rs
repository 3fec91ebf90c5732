use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use sspr_core::par::Parallelism;
use sspr_core::reward::{inject_reward, optimal_target_with, reward_curve, InjectRewardParams};

fn grid_search(c: &mut Criterion) {
    let params = InjectRewardParams::default();
    let threads = std::thread::available_parallelism().map_or(2, |n| n.get().max(2));
    let mut group = c.benchmark_group("optimal_target");
    group.sample_size(20);
    for g in [8u32, 64] {
        for (name, par) in [("serial", Parallelism::Serial), ("threads", Parallelism::Threads(threads))] {
            group.bench_with_input(BenchmarkId::new(name, g), &g, |b, &g| {
                b.iter(|| optimal_target_with(par, g, |s| inject_reward(true, s, &params), 1e-3).unwrap())
            });
        }
    }
    group.finish();

    let mut group = c.benchmark_group("reward_curve");
    group.sample_size(20);
    for (name, par) in [("serial", Parallelism::Serial), ("threads", Parallelism::Threads(threads))] {
        group.bench_function(name, |b| b.iter(|| reward_curve(par, 64, &params, 1.0, 3.0, 1e-3).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, grid_search);
criterion_main!(benches);
