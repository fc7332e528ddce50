use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use spherecov::{build_block_cov, drop_one_cv, CompositeLikelihood, Preset};
use spherecov_bench::{dataset, grid, reference_model};

fn block_covariance(c: &mut Criterion) {
    let model = reference_model(Preset::M1);
    let mut group = c.benchmark_group("block_covariance");
    for n in [8, 15] {
        let sites: Vec<_> = grid(n).into_iter().flat_map(|s| [s, s]).collect();
        let vars: Vec<usize> = (0..sites.len()).map(|k| k % 2).collect();
        group.bench_with_input(BenchmarkId::from_parameter(sites.len()), &n, |b, _| {
            b.iter(|| build_block_cov(black_box(&model), &sites, &vars).unwrap())
        });
    }
    group.finish();
}

fn composite_likelihood(c: &mut Criterion) {
    let mut group = c.benchmark_group("composite_likelihood");
    for preset in [Preset::M1, Preset::M2, Preset::M3] {
        let model = reference_model(preset);
        let data = dataset(&model, 15);
        let cl = CompositeLikelihood::new(&data, 1.0).unwrap();
        group.bench_function(format!("{preset:?}"), |b| {
            b.iter(|| cl.evaluate(black_box(&model)))
        });
    }
    group.finish();
}

fn cross_validation(c: &mut Criterion) {
    let model = reference_model(Preset::M1);
    let data = dataset(&model, 15);
    c.bench_function("drop_one_cv/450", |b| {
        b.iter(|| drop_one_cv(black_box(&model), &data).unwrap())
    });
}

criterion_group!(
    benches,
    block_covariance,
    composite_likelihood,
    cross_validation
);
criterion_main!(benches);
