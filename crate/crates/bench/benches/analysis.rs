use std::collections::BTreeSet;

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use ideolens::analysis::stats::{bootstrap_mean_diff, item_rng, mann_whitney, welch};
use ideolens::analysis::{biplot, order_tags_smooth, person_forest, tag_forest, ForestConfig};
use ideolens::elicitation::Respondent;
use ideolens_bench::{assignments, respondents, rng, score_matrix, scores, tag_table};
use rand::Rng;

fn mann_whitney_bench(c: &mut Criterion) {
    let mut r = rng(1);
    let mut g = c.benchmark_group("mann_whitney");
    for (n1, n2) in [(8, 8), (8, 60), (40, 40)] {
        let (x, y) = (scores(n1, &mut r), scores(n2, &mut r));
        g.bench_with_input(BenchmarkId::from_parameter(format!("{n1}x{n2}")), &(x, y), |b, (x, y)| {
            b.iter(|| mann_whitney(black_box(x), black_box(y)))
        });
    }
    g.finish();
}

fn welch_bench(c: &mut Criterion) {
    let mut r = rng(2);
    let x: Vec<f64> = (0..300).map(|_| r.random_range(-1.0..1.0)).collect();
    let y: Vec<f64> = (0..3700).map(|_| r.random_range(-1.0..1.0)).collect();
    c.bench_function("welch_300_vs_3700", |b| b.iter(|| welch(black_box(&x), black_box(&y))));
}

fn bootstrap_bench(c: &mut Criterion) {
    let mut r = rng(3);
    let (x, y) = (scores(30, &mut r), scores(12, &mut r));
    c.bench_function("bootstrap_10000", |b| {
        b.iter(|| bootstrap_mean_diff(black_box(&x), black_box(&y), 10_000, &mut item_rng(1, "topic")))
    });
}

fn biplot_bench(c: &mut Criterion) {
    let mut r = rng(4);
    // 13 models in six languages, about the size of the reference campaign
    let table = tag_table(&respondents(13), 61, &mut r);
    c.bench_function("biplot_78x61", |b| b.iter(|| biplot(black_box(&table)).unwrap()));
}

fn radar_order_bench(c: &mut Criterion) {
    let mut r = rng(5);
    let tags: Vec<String> = (0..61).map(|k| format!("tag{k:02}")).collect();
    let values: Vec<Vec<f64>> = (0..6).map(|_| (0..61).map(|_| r.random_range(-0.2..0.2)).collect()).collect();
    c.bench_function("order_tags_smooth_61", |b| b.iter(|| order_tags_smooth(black_box(&tags), black_box(&values))));
}

fn forest_bench(c: &mut Criterion) {
    let mut r = rng(6);
    let rs = respondents(4);
    let matrix = score_matrix(&rs, 500, 0.8, &mut r);
    let tags = assignments(500, 61, &mut r);
    let g1: BTreeSet<Respondent> = rs.iter().filter(|x| x.model_id.as_str() < "model02").cloned().collect();
    let g2: BTreeSet<Respondent> = rs.iter().filter(|x| !g1.contains(x)).cloned().collect();
    let cfg = ForestConfig { top_k: 20, resamples: 2_000, seed: 1 };
    let mut g = c.benchmark_group("forest");
    g.sample_size(10);
    g.bench_function("person_500_topics", |b| b.iter(|| person_forest(&matrix, &g1, &g2, &cfg).unwrap()));
    g.bench_function("tag_500_topics", |b| b.iter(|| tag_forest(&matrix, &tags, &g1, &g2, &cfg).unwrap()));
    g.finish();
}

criterion_group!(benches, mann_whitney_bench, welch_bench, bootstrap_bench, biplot_bench, radar_order_bench, forest_bench);
criterion_main!(benches);
