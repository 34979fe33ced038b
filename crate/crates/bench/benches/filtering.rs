use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use ideolens::filtering::{build_score_matrix, run_filters, support_from_rows};
use ideolens_bench::{respondents, response_rows, rng};

fn filter_bench(c: &mut Criterion) {
    let mut r = rng(7);
    // 13 models x 6 languages x 400 topics
    let rows = response_rows(&respondents(13), 400, &mut r);
    let support = support_from_rows(&rows);
    let mut g = c.benchmark_group("filtering");
    g.sample_size(20);
    g.bench_function("run_filters_31200_rows", |b| {
        b.iter_batched(|| rows.clone(), |rows| run_filters(rows, &support).unwrap(), BatchSize::LargeInput)
    });
    let filtered = run_filters(rows.clone(), &support).unwrap();
    g.bench_function("build_score_matrix", |b| b.iter(|| build_score_matrix(&filtered).unwrap()));
    g.finish();
}

criterion_group!(benches, filter_bench);
criterion_main!(benches);
