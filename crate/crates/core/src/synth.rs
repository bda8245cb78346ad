//! ARMA-driven toy tasks with analytically known optimal losses.
//!
//! Every input dimension is an independent ARMA series. The target at time `t`
//! is the average of all inputs at the same time `t`, observed only at the
//! prediction node. An input `dist` hops away from the prediction node is
//! visible at lag `tau = ceil((dist + 1) / inroll) - 1`; when `tau` is 0 it is
//! known exactly, when `tau` is 1 the best one can do is its one-step-ahead
//! conditional mean, which misses exactly the innovation. Hence, with `n`
//! inputs all within `2 * inroll - 1` hops, the optimal mean squared error is
//! `sigma^2 / n^2` times the number of inputs farther than `inroll - 1` hops.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{GrnnError, Result};
use crate::ndmath::Tensor;
use crate::scenario::{Scenario, ScenarioBuilder};
use crate::summaries::SummaryFn;

pub const BURN_IN: usize = 500;

/// `x_t = sum_j ar_j x_{t-j} + e_t + sum_j ma_j e_{t-j}`, `e_t ~ N(0, sigma^2)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmaProcess {
    pub ar: Vec<f64>,
    pub ma: Vec<f64>,
    pub sigma: f64,
}

impl Default for ArmaProcess {
    /// ARMA(2,1) with `ar = (0.6, -0.2)`, `ma = (0.3)`, unit innovations.
    fn default() -> Self {
        ArmaProcess {
            ar: vec![0.6, -0.2],
            ma: vec![0.3],
            sigma: 1.0,
        }
    }
}

/// True if all roots of `1 - sum_j ar_j z^j` lie strictly outside the unit circle.
///
/// Uses the step-down recursion: the process is stationary iff every partial
/// autocorrelation it produces has magnitude below one.
pub fn is_stationary(ar: &[f64]) -> bool {
    let mut a = ar.to_vec();
    while let Some(&k) = a.last() {
        if !k.is_finite() || k.abs() >= 1.0 {
            return false;
        }
        let m = a.len();
        let denom = 1.0 - k * k;
        a = (0..m - 1).map(|j| (a[j] + k * a[m - 2 - j]) / denom).collect();
    }
    true
}

impl ArmaProcess {
    pub fn new(ar: Vec<f64>, ma: Vec<f64>, sigma: f64) -> Result<Self> {
        if !is_stationary(&ar) {
            return Err(GrnnError::NonStationary(ar));
        }
        if !(sigma >= 0.0 && sigma.is_finite()) || ma.iter().any(|m| !m.is_finite()) {
            return Err(GrnnError::InvalidArgument(format!("ARMA sigma {sigma} / ma {ma:?}")));
        }
        Ok(ArmaProcess { ar, ma, sigma })
    }

    /// Length-`len` sample plus its innovations, after discarding [`BURN_IN`] steps.
    pub fn sample_with_innovations(&self, len: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
        let total = len + BURN_IN;
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut x = vec![0.0; total];
        let mut e = vec![0.0; total];
        for t in 0..total {
            e[t] = self.sigma * normal.sample(rng);
            let mut v = e[t];
            for (j, a) in self.ar.iter().enumerate() {
                if t > j {
                    v += a * x[t - j - 1];
                }
            }
            for (j, m) in self.ma.iter().enumerate() {
                if t > j {
                    v += m * e[t - j - 1];
                }
            }
            x[t] = v;
        }
        (x.split_off(BURN_IN), e.split_off(BURN_IN))
    }

    pub fn sample(&self, len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.sample_with_innovations(len, rng).0
    }

    /// Forecasts of `x_t` from observations up to `t - lag`, for every `t`.
    ///
    /// Innovations are reconstructed from the observed series alone (zero
    /// history before the first sample); `lag = 0` returns the series itself.
    pub fn forecast(&self, x: &[f64], lag: usize) -> Vec<f64> {
        if lag == 0 {
            return x.to_vec();
        }
        let n = x.len();
        let one_step = |hist: &dyn Fn(usize) -> f64, eps: &dyn Fn(usize) -> f64, t: usize| {
            let mut v = 0.0;
            for (j, a) in self.ar.iter().enumerate() {
                if t > j {
                    v += a * hist(t - j - 1);
                }
            }
            for (j, m) in self.ma.iter().enumerate() {
                if t > j {
                    v += m * eps(t - j - 1);
                }
            }
            v
        };
        // reconstructed innovations
        let mut eps = vec![0.0; n];
        for t in 0..n {
            let pred = one_step(&|s| x[s], &|s| eps[s], t);
            eps[t] = x[t] - pred;
        }
        let mut out = vec![0.0; n];
        let mut path = Vec::new();
        for (t, o) in out.iter_mut().enumerate() {
            if t < lag {
                // nothing observed yet: unconditional mean
                continue;
            }
            let origin = t - lag;
            // path[k] = forecast of x_{origin + 1 + k}
            path.clear();
            for k in 0..lag {
                let s = origin + 1 + k;
                let hist = |r: usize| if r <= origin { x[r] } else { path[r - origin - 1] };
                let e = |r: usize| if r <= origin { eps[r] } else { 0.0 };
                let v = one_step(&hist, &e, s);
                path.push(v);
            }
            *o = path[lag - 1];
        }
        out
    }
}

/// Toy topologies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TaskKind {
    /// One node with three input dimensions; a plain RNN.
    Basic,
    /// `n` input leaves around a zero-input center that predicts.
    Star(usize),
    /// A path of `d` nodes, each with one input; the first node predicts.
    Chain(usize),
    /// Root with input, two zero-input children, each with two input leaves;
    /// separate "up" and "down" relations; the root predicts.
    Tree,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskKind::Basic => write!(f, "basic"),
            TaskKind::Star(n) => write!(f, "star{n}"),
            TaskKind::Chain(d) => write!(f, "chain{d}"),
            TaskKind::Tree => write!(f, "tree"),
        }
    }
}

impl FromStr for TaskKind {
    type Err = GrnnError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || GrnnError::InvalidArgument(format!("unknown task {s:?} (basic, starN, chainN, tree)"));
        let num = |rest: &str| rest.parse::<usize>().ok().filter(|&n| n >= 1).ok_or_else(bad);
        match s {
            "basic" => Ok(TaskKind::Basic),
            "tree" => Ok(TaskKind::Tree),
            _ if s.starts_with("star") => Ok(TaskKind::Star(num(&s[4..])?)),
            _ if s.starts_with("chain") => Ok(TaskKind::Chain(num(&s[5..])?)),
            _ => Err(bad()),
        }
    }
}

impl Serialize for TaskKind {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        ser.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for TaskKind {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Graph layout of a task, without series.
#[derive(Clone, Debug, PartialEq)]
pub struct Topology {
    pub num_nodes: usize,
    pub prediction_node: usize,
    /// `(node, input dimension)` of every ARMA-driven input, in series order.
    pub sources: Vec<(usize, usize)>,
    /// Input width per node.
    pub input_dims: Vec<usize>,
    /// Classes as `(members, loss weight)`.
    pub classes: Vec<(Vec<usize>, f64)>,
    /// Relations as undirected pairs or directed edges.
    pub relations: Vec<RelationLayout>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum RelationLayout {
    Undirected(Vec<(usize, usize)>),
    Directed(Vec<(usize, usize)>),
}

impl TaskKind {
    pub fn topology(self) -> Result<Topology> {
        let t = match self {
            TaskKind::Basic => Topology {
                num_nodes: 1,
                prediction_node: 0,
                sources: vec![(0, 0), (0, 1), (0, 2)],
                input_dims: vec![3],
                classes: vec![(vec![0], 1.0)],
                relations: vec![],
            },
            TaskKind::Star(n) => Topology {
                num_nodes: n + 1,
                prediction_node: 0,
                sources: (1..=n).map(|v| (v, 0)).collect(),
                input_dims: vec![1; n + 1],
                classes: vec![((1..=n).collect(), 0.0), (vec![0], 1.0)],
                relations: vec![RelationLayout::Undirected((1..=n).map(|v| (0, v)).collect())],
            },
            TaskKind::Chain(d) => {
                let mut classes = Vec::new();
                if d > 1 {
                    classes.push(((1..d).collect(), 0.0));
                }
                classes.push((vec![0], 1.0));
                Topology {
                    num_nodes: d,
                    prediction_node: 0,
                    sources: (0..d).map(|v| (v, 0)).collect(),
                    input_dims: vec![1; d],
                    classes,
                    relations: vec![RelationLayout::Undirected((1..d).map(|v| (v - 1, v)).collect())],
                }
            }
            TaskKind::Tree => {
                // 0 root; 1, 2 internal; 3, 4 under 1; 5, 6 under 2
                let parent_child = [(0, 1), (0, 2), (1, 3), (1, 4), (2, 5), (2, 6)];
                Topology {
                    num_nodes: 7,
                    prediction_node: 0,
                    sources: vec![(0, 0), (3, 0), (4, 0), (5, 0), (6, 0)],
                    input_dims: vec![1; 7],
                    classes: vec![(vec![3, 4, 5, 6], 0.0), (vec![1, 2], 0.0), (vec![0], 1.0)],
                    relations: vec![
                        // up: a parent reads its children
                        RelationLayout::Directed(parent_child.to_vec()),
                        // down: a child reads its parent
                        RelationLayout::Directed(parent_child.iter().map(|&(p, c)| (c, p)).collect()),
                    ],
                }
            }
        };
        if matches!(self, TaskKind::Star(0) | TaskKind::Chain(0)) {
            return Err(GrnnError::InvalidArgument(format!("degenerate task {self}")));
        }
        Ok(t)
    }

    /// Default summary per relation.
    pub fn default_summaries(self) -> Vec<SummaryFn> {
        match self {
            TaskKind::Basic => vec![],
            TaskKind::Star(_) | TaskKind::Chain(_) => vec![SummaryFn::Sum],
            TaskKind::Tree => vec![SummaryFn::Sum, SummaryFn::Sum],
        }
    }
}

impl Topology {
    fn build(&self, inputs: Vec<Tensor>, targets: Vec<Tensor>, steps: usize) -> Result<Scenario> {
        let mut b = ScenarioBuilder::new(self.num_nodes, steps);
        for (members, w) in &self.classes {
            let p = self.input_dims[members[0]];
            b = b.weighted_class(members.clone(), p, 1, *w);
        }
        for r in &self.relations {
            b = match r {
                RelationLayout::Undirected(pairs) => b.undirected(pairs),
                RelationLayout::Directed(edges) => b.directed(edges.clone()),
            };
        }
        b.build(inputs, targets)
    }

    /// `dist(source -> prediction node)` for every source.
    pub fn source_distances(&self) -> Result<Vec<usize>> {
        let steps = 1;
        let inputs = self.input_dims.iter().map(|&p| Tensor::zeros(&[steps, p])).collect();
        let targets = vec![Tensor::zeros(&[steps, 1]); self.num_nodes];
        let s = self.build(inputs, targets, steps)?;
        let dist = s.distances_to(self.prediction_node);
        self.sources
            .iter()
            .map(|&(v, _)| {
                dist[v].ok_or_else(|| {
                    GrnnError::InvalidArgument(format!("input node {v} cannot reach the prediction node"))
                })
            })
            .collect()
    }
}

/// Smallest lag at which an input `dist` hops away is visible with the given inroll.
pub fn visible_lag(dist: usize, inroll: usize) -> usize {
    (dist + 1).div_ceil(inroll) - 1
}

/// Analytic optimal MSE for inputs at `distances`; requires every `dist <= 2 * inroll - 1`.
pub fn analytic_optimum(distances: &[usize], inroll: usize, sigma: f64) -> Result<f64> {
    if inroll == 0 {
        return Err(GrnnError::InvalidArgument("inroll must be >= 1".into()));
    }
    if let Some(d) = distances.iter().find(|&&d| d > 2 * inroll - 1) {
        return Err(GrnnError::InvalidArgument(format!(
            "input at distance {d} exceeds 2 * inroll - 1 = {}; no closed-form optimum",
            2 * inroll - 1
        )));
    }
    let n = distances.len() as f64;
    let hidden = distances.iter().filter(|&&d| d + 1 > inroll).count() as f64;
    Ok(sigma * sigma / (n * n) * hidden)
}

/// A generated toy task.
#[derive(Clone, Debug)]
pub struct ToyTask {
    pub kind: TaskKind,
    pub inroll: usize,
    pub seed: u64,
    pub arma: ArmaProcess,
    pub topology: Topology,
    pub distances: Vec<usize>,
    pub scenario: Scenario,
    pub optimal_loss: f64,
}

fn source_rng(seed: u64, source: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(source as u64 + 1);
    rng
}

/// Builds the scenario for `kind` with `steps` time steps and its analytic optimum.
pub fn build_task(kind: TaskKind, inroll: usize, steps: usize, seed: u64, arma: &ArmaProcess) -> Result<ToyTask> {
    let topology = kind.topology()?;
    let distances = topology.source_distances()?;
    let optimal_loss = analytic_optimum(&distances, inroll, arma.sigma)?;
    if steps == 0 {
        return Err(GrnnError::InvalidArgument("task needs at least one step".into()));
    }

    let series: Vec<Vec<f64>> = (0..topology.sources.len())
        .map(|i| arma.sample(steps, &mut source_rng(seed, i)))
        .collect();
    let n = series.len() as f64;
    let target: Vec<f64> = (0..steps)
        .map(|t| series.iter().map(|s| s[t]).sum::<f64>() / n)
        .collect();

    let mut inputs: Vec<Tensor> = topology
        .input_dims
        .iter()
        .map(|&p| Tensor::zeros(&[steps, p]))
        .collect();
    for (&(v, dim), s) in topology.sources.iter().zip(&series) {
        let p = topology.input_dims[v];
        let data = inputs[v].data_mut();
        for t in 0..steps {
            data[t * p + dim] = s[t];
        }
    }
    let target = Tensor::new(vec![steps, 1], target)?;
    let targets = vec![target; topology.num_nodes];
    let scenario = topology.build(inputs, targets, steps)?;
    Ok(ToyTask {
        kind,
        inroll,
        seed,
        arma: arma.clone(),
        topology,
        distances,
        scenario,
        optimal_loss,
    })
}

impl ToyTask {
    /// Manifest recording how the task was generated.
    pub fn manifest(&self) -> TaskManifest {
        TaskManifest {
            task: self.kind,
            inroll: self.inroll,
            seed: self.seed,
            steps: self.scenario.num_steps,
            arma: self.arma.clone(),
            prediction_node: self.topology.prediction_node,
            input_distances: self.distances.clone(),
            optimal_loss: self.optimal_loss,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskManifest {
    pub task: TaskKind,
    pub inroll: usize,
    pub seed: u64,
    pub steps: usize,
    pub arma: ArmaProcess,
    pub prediction_node: usize,
    pub input_distances: Vec<usize>,
    pub optimal_loss: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub trials: usize,
}

impl McEstimate {
    /// `|mean - value| <= k * std_err`, with a rounding allowance for zero-variance estimates.
    pub fn agrees_with(&self, value: f64, k: f64) -> bool {
        (self.mean - value).abs() <= k * self.std_err + 1e-12
    }
}

// Reconstructed innovations settle within a few dozen steps for invertible MA parts.
const MC_WARMUP: usize = 200;

/// Empirical MSE of the information-constrained ideal predictor.
///
/// Each input is simulated, then forecast from exactly the lags the
/// reachability rule makes visible at the prediction node; the error is the
/// gap between the target average and the average of those forecasts.
pub fn monte_carlo_optimum(
    kind: TaskKind,
    inroll: usize,
    arma: &ArmaProcess,
    trials: usize,
    seed: u64,
) -> Result<McEstimate> {
    if inroll == 0 || trials < 2 {
        return Err(GrnnError::InvalidArgument("need inroll >= 1 and trials >= 2".into()));
    }
    let topology = kind.topology()?;
    let distances = topology.source_distances()?;
    let len = trials + MC_WARMUP;
    let n = distances.len() as f64;
    let mut target = vec![0.0; len];
    let mut predicted = vec![0.0; len];
    for (i, &d) in distances.iter().enumerate() {
        let x = arma.sample(len, &mut source_rng(seed ^ 0x5eed_0f_0ac1e, i));
        let f = arma.forecast(&x, visible_lag(d, inroll));
        for t in 0..len {
            target[t] += x[t];
            predicted[t] += f[t];
        }
    }
    let errs: Vec<f64> = (MC_WARMUP..len)
        .map(|t| {
            let e = target[t] / n - predicted[t] / n;
            e * e
        })
        .collect();
    let m = errs.len() as f64;
    let mean = errs.iter().sum::<f64>() / m;
    let var = errs.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (m - 1.0);
    Ok(McEstimate {
        mean,
        std_err: (var / m).sqrt(),
        trials: errs.len(),
    })
}

/// Shape of a random graph scenario for tests, benchmarks and gradient checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomScenario {
    pub nodes: usize,
    pub steps: usize,
    pub relations: usize,
    /// Probability of each directed edge `(u, v)`, `u != v`, per relation.
    pub edge_prob: f64,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl RandomScenario {
    pub fn new(nodes: usize, steps: usize, relations: usize) -> Self {
        RandomScenario {
            nodes,
            steps,
            relations,
            edge_prob: 0.4,
            input_dim: 2,
            output_dim: 1,
        }
    }

    /// One class; inputs and targets uniform in [-1, 1).
    pub fn build(&self, seed: u64) -> Result<Scenario> {
        use rand::Rng;
        if !(0.0..=1.0).contains(&self.edge_prob) {
            return Err(GrnnError::InvalidArgument(format!("edge probability {}", self.edge_prob)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.nodes;
        let mut b = ScenarioBuilder::new(n, self.steps).class((0..n).collect(), self.input_dim, self.output_dim);
        for _ in 0..self.relations {
            let mut edges = Vec::new();
            for u in 0..n {
                for v in 0..n {
                    if u != v && rng.gen_bool(self.edge_prob) {
                        edges.push((u, v));
                    }
                }
            }
            b = b.directed(edges);
        }
        let mut series = |w: usize| {
            (0..n)
                .map(|_| Tensor::new(vec![self.steps, w], (0..self.steps * w).map(|_| rng.gen_range(-1.0..1.0)).collect()))
                .collect::<Result<Vec<_>>>()
        };
        let inputs = series(self.input_dim)?;
        let targets = series(self.output_dim)?;
        b.build(inputs, targets)
    }
}
