use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use synthimg_core::embedding::{run_tsne, Points, TsneConfig};
use synthimg_core::eval::cv::{fit_artifacts, render_sample};
use synthimg_core::synthetic::separable_table;
use synthimg_core::{Arch, BinningScheme, Colors, Fingerprint, Layout, Model, ModelSpec, Pipeline, Tensor};

fn random_batch(shape: Vec<usize>, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
}

fn cnn2d(c: &mut Criterion) {
    let spec = ModelSpec::new(Arch::Cnn2d, vec![10, 10, 1]);
    let model = Model::glorot(spec, 1).unwrap();
    let x = random_batch(vec![16, 10, 10, 1], 2);
    let y: Vec<f64> = (0..16).map(|i| (i % 2) as f64).collect();
    c.bench_function("cnn2d_10x10x64_forward_b16", |b| b.iter(|| model.forward(black_box(&x)).unwrap()));
    c.bench_function("cnn2d_10x10x64_gradients_b16", |b| {
        b.iter(|| model.gradients(black_box(&x), black_box(&y)).unwrap())
    });
}

fn tsne(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let points = Points::new((0..200 * 40).map(|_| rng.random_range(0.0..1.0)).collect(), 40).unwrap();
    let cfg = TsneConfig::default();
    let mut g = c.benchmark_group("tsne");
    g.sample_size(10);
    g.bench_function("exact_200_points_300_iter", |b| {
        b.iter(|| run_tsne(black_box(&points), &cfg, Fingerprint::of_indices(&[])).unwrap())
    });
    g.finish();
}

fn render(c: &mut Criterion) {
    let table = separable_table(100, 542, 4).unwrap();
    let rows: Vec<usize> = (0..table.n_samples()).collect();
    for colors in [Colors::Gray, Colors::Viridis] {
        let p = Pipeline::new(BinningScheme::Spb, Layout::Fillup, Arch::Cnn2d, colors);
        let art = fit_artifacts(&table, &p, &rows, 0).unwrap();
        c.bench_function(&format!("render_fillup_542_{}", colors.tag()), |b| {
            b.iter(|| render_sample(&table, &p, &art, black_box(7)).unwrap())
        });
    }
}

criterion_group!(benches, cnn2d, tsne, render);
criterion_main!(benches);
