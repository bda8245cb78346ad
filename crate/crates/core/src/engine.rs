//! The gRNN forward pass.
//!
//! All hidden states start at zero. For every time step the state carries over
//! from the previous step's final inroll iteration; then, `inroll` times, every
//! node first computes its summaries from the *previous* iteration's neighbor
//! states, and only after all summaries exist does every cell step. The data
//! input of a time step is fed again at every inroll iteration. Only the
//! predictions of the final iteration enter the loss.
//!
//! With this schedule, input `X(v, t - tau)` can influence prediction `y(u, t)`
//! iff `dist(v -> u) <= (tau + 1) * inroll - 1`.

use std::fmt;
use std::io::Write;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::cells::{BoundCell, CellKind, CellParams, CellState, ParamRecord, StateVars};
use crate::error::{GrnnError, Result};
use crate::ndmath::{ParamGrads, Parameter, Parameterized, Tape, Tensor, Var};
use crate::scenario::{NeighborIndex, Scenario};
use crate::summaries::{total_summary_dim, SummaryFn, SummarySpec};

/// Architecture choices shared by all classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub cell: CellKind,
    pub hidden_dim: usize,
    /// One set function per relation, in relation order.
    pub summaries: Vec<SummaryFn>,
    pub inroll: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GrnnModel {
    pub kind: CellKind,
    pub hidden_dim: usize,
    pub inroll: usize,
    pub summaries: Vec<SummarySpec>,
    /// One cell per equivalence class, indexed by class.
    pub cells: Vec<CellParams>,
}

pub type NodeStates = Vec<CellState>;

impl GrnnModel {
    pub fn new(cfg: &ModelConfig, s: &Scenario, seed: u64) -> Result<Self> {
        if cfg.summaries.len() != s.num_relations() {
            return Err(GrnnError::InvalidArgument(format!(
                "{} summaries configured for {} relations",
                cfg.summaries.len(),
                s.num_relations()
            )));
        }
        let specs = cfg
            .summaries
            .iter()
            .enumerate()
            .map(|(k, &f)| SummarySpec::new(k, f, cfg.hidden_dim))
            .collect();
        Self::with_specs(cfg.cell, cfg.hidden_dim, cfg.inroll, specs, s, seed)
    }

    pub fn with_specs(
        kind: CellKind,
        hidden_dim: usize,
        inroll: usize,
        summaries: Vec<SummarySpec>,
        s: &Scenario,
        seed: u64,
    ) -> Result<Self> {
        if inroll == 0 {
            return Err(GrnnError::InvalidArgument("inroll must be >= 1".into()));
        }
        let extra = total_summary_dim(&summaries);
        let cells = s
            .classes
            .iter()
            .enumerate()
            .map(|(c, class)| {
                let mut cell = CellParams::init(kind, c, class.input_dim + extra, hidden_dim, class.output_dim, seed)?;
                if kind == CellKind::Irnn {
                    // with U = I any random coupling to neighbor states makes the
                    // joint recurrence expansive; start from the uncoupled iRNN
                    cell.zero_input_columns(class.input_dim..class.input_dim + extra);
                }
                Ok(cell)
            })
            .collect::<Result<Vec<_>>>()?;
        let model = GrnnModel {
            kind,
            hidden_dim,
            inroll,
            summaries,
            cells,
        };
        model.check_compatible(s)?;
        Ok(model)
    }

    /// Dimension agreement between model and scenario.
    pub fn check_compatible(&self, s: &Scenario) -> Result<()> {
        s.ensure_valid()?;
        if self.inroll == 0 {
            return Err(GrnnError::InvalidArgument("inroll must be >= 1".into()));
        }
        for spec in &self.summaries {
            if spec.relation >= s.num_relations() {
                return Err(GrnnError::OutOfRange {
                    what: "summary relation",
                    index: spec.relation,
                    limit: s.num_relations(),
                });
            }
            if spec.out_dim != self.hidden_dim {
                return Err(GrnnError::dim("summary output", &[spec.out_dim], &[self.hidden_dim]));
            }
        }
        if self.cells.len() != s.classes.len() {
            return Err(GrnnError::InvalidArgument(format!(
                "model has {} cells for {} classes",
                self.cells.len(),
                s.classes.len()
            )));
        }
        let extra = total_summary_dim(&self.summaries);
        for (c, (cell, class)) in self.cells.iter().zip(&s.classes).enumerate() {
            let want = [class.input_dim + extra, self.hidden_dim, class.output_dim];
            let have = [cell.input_dim, cell.hidden_dim, cell.output_dim];
            if want != have {
                return Err(GrnnError::dim(format!("cell of class {c} (input, hidden, output)"), &have, &want));
            }
        }
        Ok(())
    }

    pub fn zero_states(&self, s: &Scenario) -> NodeStates {
        let table = s.class_table();
        (0..s.num_nodes)
            .map(|u| self.cells[table[u]].zero_state())
            .collect()
    }

    /// Replaces parameter values by name; every model parameter must be present with its shape.
    pub fn load_params(&mut self, records: &[ParamRecord]) -> Result<()> {
        for p in self.params_mut() {
            let r = records
                .iter()
                .find(|r| r.name == p.name)
                .ok_or_else(|| GrnnError::Data(format!("checkpoint lacks parameter {:?}", p.name)))?;
            if r.tensor.shape() != p.tensor.shape() {
                return Err(GrnnError::dim(
                    format!("checkpoint parameter {}", p.name),
                    r.tensor.shape(),
                    p.tensor.shape(),
                ));
            }
            p.tensor = r.tensor.clone();
        }
        Ok(())
    }

    fn bind(&self, tape: &mut Tape) -> Result<Vec<BoundCell>> {
        self.cells.iter().map(|c| c.bind(tape)).collect()
    }
}

impl Parameterized for GrnnModel {
    fn params(&self) -> Vec<&Parameter> {
        self.cells.iter().flat_map(|c| c.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        self.cells.iter_mut().flat_map(|c| c.params_mut()).collect()
    }
}

/// Which time steps to run and which of them contribute to the loss (0-based, half-open).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ForwardSpec {
    pub steps: Range<usize>,
    pub loss_steps: Range<usize>,
    pub keep_predictions: bool,
    /// Scan every op output for NaN/Inf.
    pub checked: bool,
}

impl ForwardSpec {
    pub fn window(steps: Range<usize>) -> Self {
        ForwardSpec {
            loss_steps: steps.clone(),
            steps,
            keep_predictions: false,
            checked: false,
        }
    }

    pub fn all(s: &Scenario) -> Self {
        Self::window(0..s.num_steps)
    }

    pub fn with_loss_steps(mut self, loss_steps: Range<usize>) -> Self {
        self.loss_steps = loss_steps;
        self
    }

    pub fn keep_predictions(mut self) -> Self {
        self.keep_predictions = true;
        self
    }

    pub fn checked(mut self, on: bool) -> Self {
        self.checked = on;
        self
    }

    fn validate(&self, s: &Scenario) -> Result<()> {
        let ok = self.steps.start <= self.steps.end
            && self.steps.end <= s.num_steps
            && (self.loss_steps.is_empty()
                || (self.loss_steps.start >= self.steps.start && self.loss_steps.end <= self.steps.end));
        if ok {
            Ok(())
        } else {
            Err(GrnnError::InvalidArgument(format!(
                "time range {:?} (loss {:?}) outside 0..{}",
                self.steps, self.loss_steps, s.num_steps
            )))
        }
    }
}

/// Final-inroll predictions `[step][node] -> values`.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictions {
    pub first_step: usize,
    pub values: Vec<Vec<Vec<f64>>>,
}

impl Predictions {
    pub fn get(&self, u: usize, t: usize) -> &[f64] {
        &self.values[t - self.first_step][u]
    }

    /// CSV `node,t,dim,prediction,target` with 0-based steps.
    pub fn write_csv<W: Write>(&self, s: &Scenario, mut w: W) -> std::io::Result<()> {
        writeln!(w, "node,t,dim,prediction,target")?;
        for (i, row) in self.values.iter().enumerate() {
            let t = self.first_step + i;
            for (u, pred) in row.iter().enumerate() {
                for (j, (p, y)) in pred.iter().zip(s.target(u, t)).enumerate() {
                    writeln!(w, "{u},{t},{j},{p:?},{y:?}")?;
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    /// Weighted sum of per-prediction losses over the loss steps.
    pub loss: f64,
    /// Same sum broken down per node.
    pub node_loss: Vec<f64>,
    /// Number of predictions with nonzero weight that entered `loss`.
    pub count: usize,
    pub predictions: Option<Predictions>,
    /// States after the last step, for chaining windows.
    pub final_states: NodeStates,
}

impl RunOutput {
    pub fn mean_loss(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.loss / self.count as f64
        }
    }
}

impl fmt::Display for RunOutput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "loss {:.6} over {} predictions (mean {:.6})", self.loss, self.count, self.mean_loss())
    }
}

/// A recorded forward pass ready for differentiation.
#[derive(Debug)]
pub struct TrainPass {
    pub tape: Tape,
    pub loss: Var,
    pub output: RunOutput,
}

impl TrainPass {
    pub fn backward(mut self) -> Result<ParamGrads> {
        Ok(self.tape.backward(self.loss)?.into_params())
    }
}

struct Context<'a> {
    model: &'a GrnnModel,
    s: &'a Scenario,
    index: NeighborIndex,
    class_of: Vec<usize>,
}

impl<'a> Context<'a> {
    fn new(model: &'a GrnnModel, s: &'a Scenario, prior: &NodeStates, spec: &ForwardSpec) -> Result<Self> {
        model.check_compatible(s)?;
        spec.validate(s)?;
        if prior.len() != s.num_nodes {
            return Err(GrnnError::InvalidArgument(format!(
                "{} prior states for {} nodes",
                prior.len(),
                s.num_nodes
            )));
        }
        let class_of = s.class_table();
        for (u, st) in prior.iter().enumerate() {
            let zero = model.cells[class_of[u]].zero_state();
            if st.h.shape() != zero.h.shape() || st.c.shape() != zero.c.shape() {
                return Err(GrnnError::dim(format!("prior state of node {u}"), st.h.shape(), zero.h.shape()));
            }
        }
        Ok(Context {
            model,
            s,
            index: NeighborIndex::build(s),
            class_of,
        })
    }

    /// Runs one observed time step on `tape`; returns final-iteration predictions.
    fn step_time(
        &self,
        tape: &mut Tape,
        cells: &[BoundCell],
        t: usize,
        states: &mut Vec<StateVars>,
    ) -> Result<Vec<Var>> {
        let n = self.s.num_nodes;
        let d = self.model.hidden_dim;
        let data: Vec<Var> = (0..n)
            .map(|u| tape.constant(Tensor::vector(self.s.input(u, t).to_vec())))
            .collect::<Result<_>>()?;
        let mut preds = Vec::new();
        for _ in 0..self.model.inroll {
            // phase 1: every summary reads the previous iteration's states
            let mut cell_inputs = Vec::with_capacity(n);
            for u in 0..n {
                let mut parts = Vec::with_capacity(1 + self.model.summaries.len());
                parts.push(data[u]);
                for spec in &self.model.summaries {
                    let members: Vec<Var> = self
                        .index
                        .neighbors_unchecked(u, spec.relation)
                        .iter()
                        .map(|&v| states[v].h)
                        .collect();
                    parts.push(tape.reduce(spec.func, &members, d)?);
                }
                cell_inputs.push(tape.concat(&parts)?);
            }
            // phase 2: all cells step
            let mut next = Vec::with_capacity(n);
            preds.clear();
            for u in 0..n {
                let (y, st) = cells[self.class_of[u]].step(tape, cell_inputs[u], &states[u])?;
                preds.push(y);
                next.push(st);
            }
            *states = next;
        }
        Ok(preds)
    }

    /// Adds this step's weighted losses to `terms` and to the running tallies.
    fn step_loss(
        &self,
        tape: &mut Tape,
        t: usize,
        preds: &[Var],
        terms: &mut Vec<Var>,
        out: &mut RunOutput,
    ) -> Result<()> {
        for (u, &pred) in preds.iter().enumerate() {
            let w = self.s.classes[self.class_of[u]].loss_weight;
            if w == 0.0 {
                continue;
            }
            let target = tape.constant(Tensor::vector(self.s.target(u, t).to_vec()))?;
            let mut l = tape.mse(pred, target)?;
            if w != 1.0 {
                l = tape.scale(l, w)?;
            }
            let v = tape.value(l).item();
            out.loss += v;
            out.node_loss[u] += v;
            out.count += 1;
            terms.push(l);
        }
        Ok(())
    }
}

fn empty_output(s: &Scenario, spec: &ForwardSpec, prior: &NodeStates) -> RunOutput {
    RunOutput {
        loss: 0.0,
        node_loss: vec![0.0; s.num_nodes],
        count: 0,
        predictions: spec.keep_predictions.then(|| Predictions {
            first_step: spec.steps.start,
            values: Vec::with_capacity(spec.steps.len()),
        }),
        final_states: prior.clone(),
    }
}

fn record_predictions(tape: &Tape, preds: &[Var], out: &mut RunOutput) {
    if let Some(p) = &mut out.predictions {
        p.values
            .push(preds.iter().map(|&y| tape.value(y).data().to_vec()).collect());
    }
}

/// Forward pass from all-zero states, without recording gradients.
pub fn forward(model: &GrnnModel, s: &Scenario, spec: &ForwardSpec) -> Result<RunOutput> {
    carry_forward(model, s, &model.zero_states(s), spec)
}

/// Forward pass starting from `prior` states (e.g. the end of a previous window).
pub fn carry_forward(
    model: &GrnnModel,
    s: &Scenario,
    prior: &NodeStates,
    spec: &ForwardSpec,
) -> Result<RunOutput> {
    let ctx = Context::new(model, s, prior, spec)?;
    let mut out = empty_output(s, spec, prior);
    let mut states = prior.clone();
    for t in spec.steps.clone() {
        // a fresh value-only tape per step keeps memory bounded
        let mut tape = Tape::no_grad().with_checks(spec.checked);
        let cells = model.bind(&mut tape)?;
        let mut vars = states
            .iter()
            .map(|st| StateVars::from_state(&mut tape, st))
            .collect::<Result<Vec<_>>>()?;
        let preds = ctx.step_time(&mut tape, &cells, t, &mut vars)?;
        if spec.loss_steps.contains(&t) {
            let mut terms = Vec::new();
            ctx.step_loss(&mut tape, t, &preds, &mut terms, &mut out)?;
        }
        record_predictions(&tape, &preds, &mut out);
        states = vars.iter().map(|v| v.to_state(&tape)).collect();
    }
    out.final_states = states;
    Ok(out)
}

/// Builds the whole window on `tape` and returns the scalar loss node.
pub fn build_loss(
    model: &GrnnModel,
    s: &Scenario,
    prior: &NodeStates,
    spec: &ForwardSpec,
    tape: &mut Tape,
) -> Result<(Var, RunOutput)> {
    let ctx = Context::new(model, s, prior, spec)?;
    let mut out = empty_output(s, spec, prior);
    let cells = model.bind(tape)?;
    let mut vars = prior
        .iter()
        .map(|st| StateVars::from_state(tape, st))
        .collect::<Result<Vec<_>>>()?;
    let mut terms = Vec::new();
    for t in spec.steps.clone() {
        let preds = ctx.step_time(tape, &cells, t, &mut vars)?;
        if spec.loss_steps.contains(&t) {
            ctx.step_loss(tape, t, &preds, &mut terms, &mut out)?;
        }
        record_predictions(tape, &preds, &mut out);
    }
    let loss = tape.sum_scalars(&terms)?;
    out.final_states = vars.iter().map(|v| v.to_state(tape)).collect();
    Ok((loss, out))
}

/// Recorded forward pass from `prior` (treated as constants: no gradient flows into them).
pub fn forward_train(
    model: &GrnnModel,
    s: &Scenario,
    prior: &NodeStates,
    spec: &ForwardSpec,
) -> Result<TrainPass> {
    let mut tape = Tape::new().with_checks(spec.checked);
    let (loss, output) = build_loss(model, s, prior, spec, &mut tape)?;
    Ok(TrainPass { tape, loss, output })
}
