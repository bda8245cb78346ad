use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use grnn::weather::{build_graph, triangulate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn points(n: usize) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
    (0..n).map(|_| [rng.gen_range(0.0..1000.0), rng.gen_range(0.0..1000.0)]).collect()
}

fn delaunay(c: &mut Criterion) {
    let mut g = c.benchmark_group("triangulate");
    for n in [50, 200, 1000] {
        let p = points(n);
        g.bench_with_input(BenchmarkId::from_parameter(n), &p, |b, p| b.iter(|| triangulate(p).unwrap()));
    }
    g.finish();
    let p = points(200);
    c.bench_function("build_graph_200", |b| b.iter(|| build_graph(&p, 0.95).unwrap()));
}

criterion_group!(benches, delaunay);
criterion_main!(benches);
