use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fwerk_core::fwer::solve_with_plan;
use fwerk_core::{ar1_band, Ar1Spec, GammaPlan};

fn solve(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve_alpha_loc");
    group.sample_size(10);
    let band = ar1_band(&Ar1Spec::new(1000, 0.8).unwrap(), 3).unwrap();
    for k in [2, 3] {
        let plan = GammaPlan::new(&band, k).unwrap();
        group.bench_with_input(BenchmarkId::new("ar1_m1000", k), &plan, |b, plan| {
            b.iter(|| solve_with_plan(plan, 0.05).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, solve);
criterion_main!(benches);
