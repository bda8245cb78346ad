use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use grnn::engine::{forward, forward_train, ForwardSpec, GrnnModel, ModelConfig};
use grnn::synth::RandomScenario;
use grnn::{CellKind, CellParams, SummaryFn, Tensor};

fn cell_step(c: &mut Criterion) {
    let mut g = c.benchmark_group("cell_step");
    for kind in [CellKind::Lstm, CellKind::Irnn] {
        for d in [16, 64] {
            let cell = CellParams::init(kind, 0, d + 3, d, 1, 1).unwrap();
            let x = Tensor::vector((0..d + 3).map(|i| (i as f64 * 0.1).sin()).collect());
            let state = cell.zero_state();
            g.bench_with_input(BenchmarkId::new(kind.name(), d), &d, |b, _| {
                b.iter(|| cell.step(black_box(&x), black_box(&state)).unwrap())
            });
        }
    }
    g.finish();
}

fn model(nodes: usize, steps: usize, inroll: usize) -> (GrnnModel, grnn::Scenario) {
    let s = RandomScenario {
        edge_prob: 3.0 / nodes as f64,
        ..RandomScenario::new(nodes, steps, 1)
    }
    .build(7)
    .unwrap();
    let cfg = ModelConfig {
        cell: CellKind::Lstm,
        hidden_dim: 16,
        summaries: vec![SummaryFn::Mean],
        inroll,
    };
    (GrnnModel::new(&cfg, &s, 1).unwrap(), s)
}

fn forward_pass(c: &mut Criterion) {
    let mut g = c.benchmark_group("forward");
    g.sample_size(20);
    for inroll in [1, 3] {
        let (m, s) = model(40, 30, inroll);
        g.bench_with_input(BenchmarkId::new("eval_40x30", inroll), &inroll, |b, _| {
            b.iter(|| forward(&m, &s, &ForwardSpec::all(&s)).unwrap().loss)
        });
        g.bench_with_input(BenchmarkId::new("train_40x30", inroll), &inroll, |b, _| {
            b.iter(|| {
                forward_train(&m, &s, &m.zero_states(&s), &ForwardSpec::all(&s))
                    .unwrap()
                    .backward()
                    .unwrap()
            })
        });
    }
    g.finish();
}

criterion_group!(benches, cell_step, forward_pass);
criterion_main!(benches);
