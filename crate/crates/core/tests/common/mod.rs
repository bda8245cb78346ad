//! Checks shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

use grnn::engine::{forward, ForwardSpec, GrnnModel, ModelConfig};
use grnn::synth::RandomScenario;
use grnn::{CellKind, Scenario, SummaryFn};

/// One disagreement between observed sensitivity and the reachability law.
#[derive(Debug)]
pub struct ReachMismatch {
    pub source: usize,
    pub target: usize,
    pub lag: usize,
    pub inroll: usize,
    pub dist: Option<usize>,
    pub changed: bool,
}

pub fn lstm_model(s: &Scenario, inroll: usize, summaries: Vec<SummaryFn>, seed: u64) -> GrnnModel {
    let cfg = ModelConfig {
        cell: CellKind::Lstm,
        hidden_dim: 4,
        summaries,
        inroll,
    };
    GrnnModel::new(&cfg, s, seed).unwrap()
}

/// Perturbs `X(v, t - tau)` for every node `v` and lag `tau <= max_lag` and
/// compares which predictions `y(u, t)` move against `dist(v -> u) <= (tau + 1) I - 1`.
/// Returns the mismatches and the number of (v, u, tau, I) cases examined.
pub fn reachability_mismatches(s: &Scenario, max_lag: usize, max_inroll: usize, seed: u64) -> (Vec<ReachMismatch>, usize) {
    let t = s.num_steps - 1;
    assert!(t >= max_lag);
    let n = s.num_nodes;
    let dist: Vec<Vec<Option<usize>>> = (0..n).map(|u| s.distances_to(u)).collect();
    let summaries = vec![SummaryFn::Sum; s.num_relations()];
    let mut bad = Vec::new();
    let mut cases = 0;
    for inroll in 1..=max_inroll {
        let model = lstm_model(s, inroll, summaries.clone(), seed);
        let spec = ForwardSpec::all(s).keep_predictions();
        let base = forward(&model, s, &spec).unwrap().predictions.unwrap();
        for v in 0..n {
            for lag in 0..=max_lag {
                let mut p = s.clone();
                let cols = p.inputs[v].shape()[1];
                p.inputs[v].data_mut()[(t - lag) * cols] += 0.5;
                let moved = forward(&model, &p, &spec).unwrap().predictions.unwrap();
                for (u, du) in dist.iter().enumerate() {
                    cases += 1;
                    let d = du[v];
                    let expect = d.is_some_and(|d| d + 1 <= (lag + 1) * inroll);
                    let changed = base.get(u, t) != moved.get(u, t);
                    if expect != changed {
                        bad.push(ReachMismatch {
                            source: v,
                            target: u,
                            lag,
                            inroll,
                            dist: d,
                            changed,
                        });
                    }
                }
            }
        }
    }
    (bad, cases)
}

/// Relabels a random scenario with `perm` and checks that every prediction
/// moves with its node, bit for bit. Returns a description of the first failure.
pub fn relabeling_failure(seed: u64, perm: &[usize], cell: CellKind, inroll: usize) -> Option<String> {
    let s = RandomScenario::new(perm.len(), 4, 2).build(seed).unwrap();
    let r = s.relabeled(perm).unwrap();
    let cfg = ModelConfig {
        cell,
        hidden_dim: 3,
        summaries: vec![SummaryFn::Mean, SummaryFn::Max],
        inroll,
    };
    let model = GrnnModel::new(&cfg, &s, seed).unwrap();
    let spec = ForwardSpec::all(&s).keep_predictions();
    let a = forward(&model, &s, &spec).unwrap();
    let b = forward(&model, &r, &spec).unwrap();
    let (pa, pb) = (a.predictions.unwrap(), b.predictions.unwrap());
    for t in 0..s.num_steps {
        for (u, &pu) in perm.iter().enumerate() {
            if pa.get(u, t) != pb.get(pu, t) {
                return Some(format!("node {u} -> {pu} at t={t}: {:?} vs {:?}", pa.get(u, t), pb.get(pu, t)));
            }
        }
    }
    if (a.loss - b.loss).abs() > 1e-12 * a.loss.abs().max(1.0) {
        return Some(format!("loss {} vs {}", a.loss, b.loss));
    }
    None
}
