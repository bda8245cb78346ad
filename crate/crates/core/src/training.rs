//! Joint training of all cell parameters with truncated backpropagation
//! through time.
//!
//! The training range is cut into consecutive windows of `window` steps. Each
//! window starts from the previous window's final states as plain values, so
//! gradients never cross a window boundary. Window gradients are divided by
//! the number of predictions in the window, optionally clipped to a global
//! norm, and applied with SGD or Adagrad.

use std::collections::BTreeMap;
use std::io::Write;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::engine::{forward_train, ForwardSpec, GrnnModel};
use crate::error::{GrnnError, Result};
use crate::ndmath::{ParamGrads, Parameter, Parameterized, Tensor};
use crate::scenario::Scenario;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adagrad,
}

pub const DEFAULT_EPSILON: f64 = 1e-8;

fn grad_for<'a>(grads: &'a ParamGrads, p: &Parameter) -> Result<&'a Tensor> {
    let g = grads
        .get(&p.name)
        .ok_or_else(|| GrnnError::InvalidArgument(format!("no gradient for {:?}", p.name)))?;
    if g.shape() != p.tensor.shape() {
        return Err(GrnnError::dim(format!("gradient of {}", p.name), g.shape(), p.tensor.shape()));
    }
    Ok(g)
}

/// `p <- p - lr * g` for every trainable parameter.
pub fn sgd_step(params: Vec<&mut Parameter>, grads: &ParamGrads, lr: f64) -> Result<()> {
    for p in params.into_iter().filter(|p| p.trainable) {
        let g = grad_for(grads, p)?;
        for (w, gi) in p.tensor.data_mut().iter_mut().zip(g.data()) {
            *w -= lr * gi;
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub epsilon: f64,
    /// Starting value of every Adagrad accumulator coordinate.
    pub initial_accumulator: f64,
    accum: BTreeMap<String, Tensor>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        OptimizerState {
            kind,
            learning_rate,
            epsilon: DEFAULT_EPSILON,
            initial_accumulator: 0.0,
            accum: BTreeMap::new(),
        }
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_initial_accumulator(mut self, value: f64) -> Self {
        self.initial_accumulator = value;
        self
    }

    /// Adagrad's running sum of squared gradients for `name`.
    pub fn accumulator(&self, name: &str) -> Option<&Tensor> {
        self.accum.get(name)
    }

    pub fn step(&mut self, params: Vec<&mut Parameter>, grads: &ParamGrads) -> Result<()> {
        match self.kind {
            OptimizerKind::Sgd => sgd_step(params, grads, self.learning_rate),
            OptimizerKind::Adagrad => adagrad_step(params, grads, self),
        }
    }
}

/// `acc <- acc + g^2; p <- p - lr * g / (sqrt(acc) + eps)`.
pub fn adagrad_step(params: Vec<&mut Parameter>, grads: &ParamGrads, state: &mut OptimizerState) -> Result<()> {
    let (lr, eps, init) = (state.learning_rate, state.epsilon, state.initial_accumulator);
    for p in params.into_iter().filter(|p| p.trainable) {
        let g = grad_for(grads, p)?;
        let acc = state
            .accum
            .entry(p.name.clone())
            .or_insert_with(|| Tensor::full(p.tensor.shape(), init));
        if acc.shape() != p.tensor.shape() {
            return Err(GrnnError::dim(format!("accumulator of {}", p.name), acc.shape(), p.tensor.shape()));
        }
        for ((w, a), gi) in p.tensor.data_mut().iter_mut().zip(acc.data_mut()).zip(g.data()) {
            *a += gi * gi;
            if *gi != 0.0 {
                *w -= lr * gi / (a.sqrt() + eps);
            }
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// TBPTT window length in steps.
    pub window: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    /// Global gradient-norm bound; `None` disables clipping.
    #[serde(default)]
    pub clip_norm: Option<f64>,
    /// Model initialization seed.
    #[serde(default)]
    pub seed: u64,
    /// Adagrad accumulator start; a positive value damps the first, self-normalized steps.
    #[serde(default)]
    pub initial_accumulator: f64,
}

impl TrainConfig {
    pub fn validate(&self, steps: usize) -> Result<()> {
        if self.window == 0 || self.window > steps.max(1) {
            return Err(GrnnError::InvalidArgument(format!(
                "TBPTT window {} outside 1..={steps}",
                self.window
            )));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(GrnnError::InvalidArgument(format!("learning rate {}", self.learning_rate)));
        }
        if !(self.initial_accumulator >= 0.0 && self.initial_accumulator.is_finite()) {
            return Err(GrnnError::InvalidArgument(format!(
                "initial accumulator {}",
                self.initial_accumulator
            )));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(GrnnError::InvalidArgument(format!("clip norm {c}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub window: usize,
    /// Summed loss of the window.
    pub loss: f64,
    pub count: usize,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

impl LossRecord {
    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.loss / self.count as f64
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub history: Vec<LossRecord>,
}

impl TrainReport {
    /// Mean per-prediction loss of each epoch.
    pub fn epoch_means(&self) -> Vec<f64> {
        let mut out: Vec<(f64, usize)> = Vec::new();
        for r in &self.history {
            if out.len() <= r.epoch {
                out.resize(r.epoch + 1, (0.0, 0));
            }
            out[r.epoch].0 += r.loss;
            out[r.epoch].1 += r.count;
        }
        out.into_iter()
            .map(|(l, c)| if c == 0 { 0.0 } else { l / c as f64 })
            .collect()
    }

    /// CSV `epoch,window,loss` with per-prediction mean window losses.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "epoch,window,loss")?;
        for r in &self.history {
            writeln!(w, "{},{},{:?}", r.epoch, r.window, r.mean())?;
        }
        Ok(())
    }
}

/// Trains over every step of the scenario.
pub fn train(model: &mut GrnnModel, s: &Scenario, cfg: &TrainConfig) -> Result<TrainReport> {
    train_range(model, s, cfg, 0..s.num_steps, |_, _| Ok(()))
}

/// Trains on `steps`, calling `on_epoch(epoch, model)` after every epoch.
pub fn train_range<F>(
    model: &mut GrnnModel,
    s: &Scenario,
    cfg: &TrainConfig,
    steps: Range<usize>,
    mut on_epoch: F,
) -> Result<TrainReport>
where
    F: FnMut(usize, &GrnnModel) -> Result<()>,
{
    model.check_compatible(s)?;
    cfg.validate(steps.len())?;
    if steps.end > s.num_steps {
        return Err(GrnnError::InvalidArgument(format!(
            "training range {steps:?} exceeds {} steps",
            s.num_steps
        )));
    }
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.learning_rate).with_initial_accumulator(cfg.initial_accumulator);
    let mut report = TrainReport::default();
    for epoch in 0..cfg.epochs {
        let mut states = model.zero_states(s);
        let mut start = steps.start;
        let mut window = 0;
        while start < steps.end {
            let end = (start + cfg.window).min(steps.end);
            let pass = forward_train(model, s, &states, &ForwardSpec::window(start..end))?;
            let out = pass.output.clone();
            if !out.loss.is_finite() {
                let node = out.node_loss.iter().position(|l| !l.is_finite());
                return Err(GrnnError::Diverged { window, node });
            }
            let mut grads = pass.backward()?;
            if !grads.all_finite() {
                return Err(GrnnError::Diverged { window, node: None });
            }
            if out.count > 0 {
                grads.scale(1.0 / out.count as f64);
            }
            let grad_norm = match cfg.clip_norm {
                Some(c) => grads.clip_global_norm(c),
                None => grads.global_norm(),
            };
            opt.step(model.params_mut(), &grads)?;
            report.history.push(LossRecord {
                epoch,
                window,
                loss: out.loss,
                count: out.count,
                grad_norm,
            });
            states = out.final_states;
            start = end;
            window += 1;
        }
        log::debug!(
            "epoch {epoch}: mean loss {:.6}",
            report.epoch_means().last().copied().unwrap_or_default()
        );
        on_epoch(epoch, model)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::CellKind;
    use crate::engine::{forward, ModelConfig};
    use crate::scenario::ScenarioBuilder;
    use crate::summaries::SummaryFn;

    fn single(v: f64) -> Vec<Parameter> {
        vec![Parameter::new("w", Tensor::vector(vec![v]))]
    }

    fn grads(v: f64) -> ParamGrads {
        let mut g = ParamGrads::new();
        g.insert("w", Tensor::vector(vec![v]));
        g
    }

    #[test]
    fn sgd_hand_cases() {
        let mut p = single(1.0);
        sgd_step(p.iter_mut().collect(), &grads(2.0), 0.5).unwrap();
        assert_eq!(p[0].tensor.data(), &[0.0]);
        sgd_step(p.iter_mut().collect(), &grads(0.0), 0.5).unwrap();
        assert_eq!(p[0].tensor.data(), &[0.0]);
    }

    #[test]
    fn sgd_quadratic_recursion() {
        // loss (w-3)^2, grad 2(w-3): w <- w - 0.2 (w - 3)
        let mut p = single(0.0);
        let mut w = 0.0;
        for _ in 0..60 {
            let g = 2.0 * (p[0].tensor.data()[0] - 3.0);
            sgd_step(p.iter_mut().collect(), &grads(g), 0.1).unwrap();
            w -= 0.2 * (w - 3.0);
            assert!((p[0].tensor.data()[0] - w).abs() < 1e-12);
        }
        assert!((w - 3.0).abs() < 1e-5);
    }

    #[test]
    fn adagrad_first_step_is_self_normalizing() {
        let mut p = single(0.0);
        let mut st = OptimizerState::new(OptimizerKind::Adagrad, 1.0).with_epsilon(0.0);
        adagrad_step(p.iter_mut().collect(), &grads(3.0), &mut st).unwrap();
        assert_eq!(p[0].tensor.data(), &[-1.0]);
        assert_eq!(st.accumulator("w").unwrap().data(), &[9.0]);
    }

    #[test]
    fn adagrad_zero_gradient_is_noop() {
        let mut p = single(0.7);
        let mut st = OptimizerState::new(OptimizerKind::Adagrad, 0.3);
        adagrad_step(p.iter_mut().collect(), &grads(0.0), &mut st).unwrap();
        assert_eq!(p[0].tensor.data(), &[0.7]);
        assert_eq!(st.accumulator("w").unwrap().data(), &[0.0]);
    }

    #[test]
    fn adagrad_steps_shrink_and_accumulator_grows() {
        let mut p = single(0.0);
        let mut st = OptimizerState::new(OptimizerKind::Adagrad, 0.1);
        let mut last_step = f64::INFINITY;
        let mut last_acc = 0.0;
        for _ in 0..5 {
            let before = p[0].tensor.data()[0];
            adagrad_step(p.iter_mut().collect(), &grads(1.5), &mut st).unwrap();
            let step = (p[0].tensor.data()[0] - before).abs();
            assert!(step < last_step);
            let acc = st.accumulator("w").unwrap().data()[0];
            assert!(acc >= last_acc);
            last_step = step;
            last_acc = acc;
        }
    }

    #[test]
    fn sgd_matches_rescaled_adagrad_first_step() {
        for g in [0.3, -2.0, 7.5] {
            let lr = 0.05;
            let eps = DEFAULT_EPSILON;
            let mut a = single(1.0);
            let mut b = single(1.0);
            sgd_step(a.iter_mut().collect(), &grads(g), lr).unwrap();
            let mut st = OptimizerState::new(OptimizerKind::Adagrad, lr * (g * g as f64).sqrt() + lr * eps);
            adagrad_step(b.iter_mut().collect(), &grads(g), &mut st).unwrap();
            assert!((a[0].tensor.data()[0] - b[0].tensor.data()[0]).abs() < 1e-14);
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = single(0.0);
        let mut g = ParamGrads::new();
        g.insert("w", Tensor::vector(vec![1.0, 2.0]));
        assert!(sgd_step(p.iter_mut().collect(), &g, 0.1).is_err());
    }

    fn tiny_scenario() -> Scenario {
        let t = 12;
        let xs: Vec<Tensor> = (0..2)
            .map(|u| Tensor::new(vec![t, 1], (0..t).map(|i| ((i + u) as f64 * 0.7).sin()).collect()).unwrap())
            .collect();
        let ys: Vec<Tensor> = (0..2)
            .map(|u| Tensor::new(vec![t, 1], (0..t).map(|i| ((i + u) as f64 * 0.3).cos()).collect()).unwrap())
            .collect();
        ScenarioBuilder::new(2, t)
            .class(vec![0, 1], 1, 1)
            .undirected(&[(0, 1)])
            .build(xs, ys)
            .unwrap()
    }

    fn model(s: &Scenario) -> GrnnModel {
        GrnnModel::new(
            &ModelConfig {
                cell: CellKind::Lstm,
                hidden_dim: 3,
                summaries: vec![SummaryFn::Sum],
                inroll: 2,
            },
            s,
            1,
        )
        .unwrap()
    }

    fn cfg(window: usize, lr: f64) -> TrainConfig {
        TrainConfig {
            window,
            epochs: 3,
            learning_rate: lr,
            optimizer: OptimizerKind::Adagrad,
            clip_norm: Some(5.0),
            seed: 0,
            initial_accumulator: 0.0,
        }
    }

    #[test]
    fn zero_learning_rate_leaves_params() {
        let s = tiny_scenario();
        let mut m = model(&s);
        let before = m.clone();
        train(&mut m, &s, &cfg(4, 0.0)).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn first_epoch_full_window_equals_forward() {
        let s = tiny_scenario();
        let mut m = model(&s);
        let expect = forward(&m, &s, &ForwardSpec::all(&s)).unwrap().loss;
        let r = train(&mut m, &s, &cfg(s.num_steps, 0.01)).unwrap();
        assert_eq!(r.history[0].loss, expect);
        assert_eq!(r.history.len(), 3);
    }

    #[test]
    fn training_is_deterministic_and_descends() {
        let s = tiny_scenario();
        let mut a = model(&s);
        let mut b = model(&s);
        let mut c = cfg(4, 0.05);
        c.epochs = 30;
        let ra = train(&mut a, &s, &c).unwrap();
        let rb = train(&mut b, &s, &c).unwrap();
        assert_eq!(ra, rb);
        let means = ra.epoch_means();
        assert!(means.last().unwrap() < &means[0]);
    }

    #[test]
    fn window_bounds_validated() {
        let s = tiny_scenario();
        let mut m = model(&s);
        assert!(train(&mut m, &s, &cfg(0, 0.1)).is_err());
        assert!(train(&mut m, &s, &cfg(13, 0.1)).is_err());
    }

    #[test]
    fn divergence_reported_with_window() {
        let mut s = tiny_scenario();
        s.targets[1].data_mut()[5] = f64::INFINITY;
        let mut m = model(&s);
        let err = train(&mut m, &s, &cfg(4, 0.1)).unwrap_err();
        match err {
            GrnnError::Diverged { window, node } => {
                assert_eq!(window, 1);
                assert_eq!(node, Some(1));
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn loss_history_csv() {
        let s = tiny_scenario();
        let mut m = model(&s);
        let r = train(&mut m, &s, &cfg(5, 0.01)).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("epoch,window,loss\n0,0,"));
        assert_eq!(text.lines().count(), 1 + 3 * 3);
    }
}
