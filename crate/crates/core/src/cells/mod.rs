//! Recurrent cells: `(x, state) -> (y, state')`.
//!
//! Two families are provided, an LSTM with sigmoid gates and tanh candidate /
//! output nonlinearity, and an iRNN (ReLU RNN with identity-initialized
//! recurrent weights). Both end in a learned affine readout from the new
//! hidden state to the prediction.

mod checkpoint;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Uniform;
use serde::{Deserialize, Serialize};

pub use checkpoint::{read_params, write_params, ParamRecord, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use crate::error::{GrnnError, Result};
use crate::ndmath::{Parameter, Parameterized, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Lstm,
    Irnn,
}

impl CellKind {
    pub fn name(self) -> &'static str {
        match self {
            CellKind::Lstm => "lstm",
            CellKind::Irnn => "irnn",
        }
    }
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CellKind {
    type Err = GrnnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lstm" => Ok(CellKind::Lstm),
            "irnn" => Ok(CellKind::Irnn),
            other => Err(GrnnError::InvalidArgument(format!(
                "unknown cell kind {other:?} (expected lstm or irnn)"
            ))),
        }
    }
}

const LSTM_GATES: [&str; 4] = ["i", "f", "g", "o"];

/// Learnable parameters of one equivalence class's cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CellParams {
    pub kind: CellKind,
    pub class: usize,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    params: Vec<Parameter>,
}

/// Per-node recurrent state. `c` is empty for the iRNN.
#[derive(Clone, Debug, PartialEq)]
pub struct CellState {
    pub h: Tensor,
    pub c: Tensor,
}

impl CellState {
    pub fn zeros(kind: CellKind, hidden_dim: usize) -> Self {
        let c_len = match kind {
            CellKind::Lstm => hidden_dim,
            CellKind::Irnn => 0,
        };
        CellState {
            h: Tensor::zeros(&[hidden_dim]),
            c: Tensor::zeros(&[c_len]),
        }
    }
}

/// A [`CellState`] living on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StateVars {
    pub h: Var,
    pub c: Option<Var>,
}

impl StateVars {
    pub fn from_state(tape: &mut Tape, state: &CellState) -> Result<Self> {
        let h = tape.constant(state.h.clone())?;
        let c = if state.c.is_empty() {
            None
        } else {
            Some(tape.constant(state.c.clone())?)
        };
        Ok(StateVars { h, c })
    }

    pub fn to_state(&self, tape: &Tape) -> CellState {
        CellState {
            h: tape.value(self.h).clone(),
            c: self
                .c
                .map(|c| tape.value(c).clone())
                .unwrap_or_else(|| Tensor::zeros(&[0])),
        }
    }
}

fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Tensor {
    let dist = Uniform::new_inclusive(-bound, bound);
    let data = (0..rows * cols).map(|_| rng.sample(dist)).collect();
    Tensor::new(vec![rows, cols], data).expect("rows * cols values")
}

impl CellParams {
    /// Seeded initialization. iRNN: identity recurrence, zero bias, input weights
    /// uniform in ±1/√p′. LSTM: uniform ±1/√fan-in, forget bias 1, other biases 0.
    pub fn init(
        kind: CellKind,
        class: usize,
        input_dim: usize,
        hidden_dim: usize,
        output_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 || output_dim == 0 {
            return Err(GrnnError::InvalidArgument(format!(
                "cell dims must be >= 1, got input {input_dim} hidden {hidden_dim} output {output_dim}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(class as u64);
        let (p, d, q) = (input_dim, hidden_dim, output_dim);
        let prefix = format!("class{class}/{}", kind.name());
        let in_bound = 1.0 / (p as f64).sqrt();
        let rec_bound = 1.0 / (d as f64).sqrt();
        let mut params = Vec::new();
        match kind {
            CellKind::Lstm => {
                for gate in LSTM_GATES {
                    params.push(Parameter::new(
                        format!("{prefix}/W_{gate}"),
                        uniform_matrix(&mut rng, d, p, in_bound),
                    ));
                    params.push(Parameter::new(
                        format!("{prefix}/U_{gate}"),
                        uniform_matrix(&mut rng, d, d, rec_bound),
                    ));
                    let bias = if gate == "f" { 1.0 } else { 0.0 };
                    params.push(Parameter::new(
                        format!("{prefix}/b_{gate}"),
                        Tensor::full(&[d], bias),
                    ));
                }
            }
            CellKind::Irnn => {
                params.push(Parameter::new(
                    format!("{prefix}/W"),
                    uniform_matrix(&mut rng, d, p, in_bound),
                ));
                params.push(Parameter::new(format!("{prefix}/U"), Tensor::identity(d)));
                params.push(Parameter::new(format!("{prefix}/b"), Tensor::zeros(&[d])));
            }
        }
        params.push(Parameter::new(
            format!("class{class}/readout/W"),
            uniform_matrix(&mut rng, q, d, rec_bound),
        ));
        params.push(Parameter::new(
            format!("class{class}/readout/b"),
            Tensor::zeros(&[q]),
        ));
        Ok(CellParams {
            kind,
            class,
            input_dim,
            hidden_dim,
            output_dim,
            params,
        })
    }

    /// Sets input-weight columns `cols` to zero in every gate.
    pub fn zero_input_columns(&mut self, cols: std::ops::Range<usize>) {
        let p = self.input_dim;
        let prefix = format!("class{}/{}/W", self.class, self.kind.name());
        for param in self.params.iter_mut().filter(|x| x.name.starts_with(&prefix)) {
            for row in param.tensor.data_mut().chunks_mut(p) {
                row[cols.clone()].fill(0.0);
            }
        }
    }

    pub fn param(&self, suffix: &str) -> Option<&Parameter> {
        self.params.iter().find(|p| p.name.ends_with(suffix))
    }

    pub fn param_mut(&mut self, suffix: &str) -> Option<&mut Parameter> {
        self.params.iter_mut().find(|p| p.name.ends_with(suffix))
    }

    pub fn zero_state(&self) -> CellState {
        CellState::zeros(self.kind, self.hidden_dim)
    }

    pub fn bind(&self, tape: &mut Tape) -> Result<BoundCell> {
        let vars = self
            .params
            .iter()
            .map(|p| tape.param(p))
            .collect::<Result<Vec<_>>>()?;
        Ok(BoundCell {
            kind: self.kind,
            class: self.class,
            input_dim: self.input_dim,
            hidden_dim: self.hidden_dim,
            vars,
        })
    }

    /// One step on plain tensors.
    pub fn step(&self, x: &Tensor, state: &CellState) -> Result<(Tensor, CellState)> {
        let mut tape = Tape::no_grad();
        let cell = self.bind(&mut tape)?;
        let xv = tape.constant(x.clone())?;
        let sv = StateVars::from_state(&mut tape, state)?;
        let (y, next) = cell.step(&mut tape, xv, &sv)?;
        Ok((tape.value(y).clone(), next.to_state(&tape)))
    }
}

impl Parameterized for CellParams {
    fn params(&self) -> Vec<&Parameter> {
        self.params.iter().collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        self.params.iter_mut().collect()
    }
}

/// Cell parameters registered on a tape.
#[derive(Clone, Debug)]
pub struct BoundCell {
    kind: CellKind,
    class: usize,
    input_dim: usize,
    hidden_dim: usize,
    vars: Vec<Var>,
}

impl BoundCell {
    fn affine(&self, tape: &mut Tape, w: Var, u: Var, b: Var, x: Var, h: Var) -> Result<Var> {
        let wx = tape.matvec(w, x)?;
        let uh = tape.matvec(u, h)?;
        let s = tape.add(wx, uh)?;
        tape.add(s, b)
    }

    fn check_dims(&self, tape: &Tape, x: Var, state: &StateVars) -> Result<()> {
        let class = self.class;
        let xs = tape.value(x).shape();
        if xs != [self.input_dim] {
            return Err(GrnnError::dim(
                format!("cell input of class {class}"),
                xs,
                &[self.input_dim],
            ));
        }
        let hs = tape.value(state.h).shape();
        if hs != [self.hidden_dim] {
            return Err(GrnnError::dim(
                format!("hidden state of class {class}"),
                hs,
                &[self.hidden_dim],
            ));
        }
        if self.kind == CellKind::Lstm {
            let c = state.c.ok_or_else(|| {
                GrnnError::InvalidArgument(format!("LSTM state of class {class} has no memory cell"))
            })?;
            let cs = tape.value(c).shape();
            if cs != [self.hidden_dim] {
                return Err(GrnnError::dim(
                    format!("memory cell of class {class}"),
                    cs,
                    &[self.hidden_dim],
                ));
            }
        }
        Ok(())
    }

    pub fn step(&self, tape: &mut Tape, x: Var, state: &StateVars) -> Result<(Var, StateVars)> {
        self.check_dims(tape, x, state)?;
        let v = &self.vars;
        let next = match self.kind {
            CellKind::Lstm => {
                let c_prev = state.c.expect("checked above");
                let i = self.affine(tape, v[0], v[1], v[2], x, state.h)?;
                let i = tape.sigmoid(i)?;
                let f = self.affine(tape, v[3], v[4], v[5], x, state.h)?;
                let f = tape.sigmoid(f)?;
                let g = self.affine(tape, v[6], v[7], v[8], x, state.h)?;
                let g = tape.tanh(g)?;
                let o = self.affine(tape, v[9], v[10], v[11], x, state.h)?;
                let o = tape.sigmoid(o)?;
                let keep = tape.mul(f, c_prev)?;
                let write = tape.mul(i, g)?;
                let c = tape.add(keep, write)?;
                let tc = tape.tanh(c)?;
                let h = tape.mul(o, tc)?;
                StateVars { h, c: Some(c) }
            }
            CellKind::Irnn => {
                let a = self.affine(tape, v[0], v[1], v[2], x, state.h)?;
                let h = tape.relu(a)?;
                StateVars { h, c: None }
            }
        };
        let n = v.len();
        let wy = tape.matvec(v[n - 2], next.h)?;
        let y = tape.add(wy, v[n - 1])?;
        Ok((y, next))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndmath::finite_diff_check;

    #[test]
    fn irnn_relu_kills_negative() {
        let mut cell = CellParams::init(CellKind::Irnn, 0, 2, 2, 1, 1).unwrap();
        cell.param_mut("/W").unwrap().tensor = Tensor::zeros(&[2, 2]);
        let state = CellState {
            h: Tensor::vector(vec![1.0, -1.0]),
            c: Tensor::zeros(&[0]),
        };
        let (_, next) = cell.step(&Tensor::vector(vec![0.3, 0.4]), &state).unwrap();
        assert_eq!(next.h.data(), &[1.0, 0.0]);
    }

    #[test]
    fn zero_lstm_outputs_bias() {
        let mut cell = CellParams::init(CellKind::Lstm, 0, 3, 4, 2, 9).unwrap();
        for p in cell.params_mut() {
            p.tensor = Tensor::zeros(p.tensor.shape());
        }
        cell.param_mut("readout/b").unwrap().tensor = Tensor::vector(vec![0.5, -1.5]);
        let (y, next) = cell
            .step(&Tensor::vector(vec![1.0, -2.0, 3.0]), &cell.zero_state())
            .unwrap();
        assert_eq!(next.h.data(), &[0.0; 4]);
        assert_eq!(y.data(), &[0.5, -1.5]);
    }

    #[test]
    fn irnn_init_identity() {
        let cell = CellParams::init(CellKind::Irnn, 0, 5, 3, 1, 42).unwrap();
        assert_eq!(cell.param("/U").unwrap().tensor, Tensor::identity(3));
        assert!(cell.param("irnn/b").unwrap().tensor.data().iter().all(|&b| b == 0.0));
        let bound = 1.0 / 5f64.sqrt();
        assert!(cell.param("irnn/W").unwrap().tensor.data().iter().all(|w| w.abs() <= bound));
    }

    #[test]
    fn zeroing_input_columns_touches_only_those() {
        let mut cell = CellParams::init(CellKind::Lstm, 0, 5, 3, 1, 9).unwrap();
        let before = cell.clone();
        cell.zero_input_columns(2..4);
        for (p, q) in cell.params.iter().zip(&before.params) {
            if p.name.contains("lstm/W") {
                for (r, (row, old)) in p.tensor.data().chunks(5).zip(q.tensor.data().chunks(5)).enumerate() {
                    assert_eq!(&row[2..4], &[0.0, 0.0], "{} row {r}", p.name);
                    assert_eq!((row[0], row[1], row[4]), (old[0], old[1], old[4]));
                }
            } else {
                assert_eq!(p.tensor, q.tensor, "{}", p.name);
            }
        }
    }

    #[test]
    fn lstm_forget_bias_is_one() {
        let cell = CellParams::init(CellKind::Lstm, 2, 4, 6, 1, 3).unwrap();
        let fb = &cell.param("b_f").unwrap().tensor;
        assert_eq!(fb.data(), &[1.0; 6]);
        assert!(cell.param("b_i").unwrap().tensor.data().iter().all(|&b| b == 0.0));
        assert_eq!(cell.param("b_f").unwrap().name, "class2/lstm/b_f");
    }

    #[test]
    fn init_is_deterministic() {
        let a = CellParams::init(CellKind::Lstm, 0, 4, 6, 1, 3).unwrap();
        let b = CellParams::init(CellKind::Lstm, 0, 4, 6, 1, 3).unwrap();
        let c = CellParams::init(CellKind::Lstm, 1, 4, 6, 1, 3).unwrap();
        assert_eq!(a.params, b.params);
        assert_ne!(a.params[0].tensor, c.params[0].tensor);
    }

    #[test]
    fn zero_dims_rejected() {
        assert!(CellParams::init(CellKind::Irnn, 0, 0, 3, 1, 0).is_err());
    }

    #[test]
    fn dimension_error_names_class() {
        let cell = CellParams::init(CellKind::Irnn, 7, 3, 2, 1, 0).unwrap();
        let err = cell
            .step(&Tensor::vector(vec![1.0]), &cell.zero_state())
            .unwrap_err()
            .to_string();
        assert!(err.contains("class 7"), "{err}");
    }

    #[test]
    fn lstm_hidden_bounded() {
        let cell = CellParams::init(CellKind::Lstm, 0, 2, 5, 1, 11).unwrap();
        let mut state = cell.zero_state();
        for t in 0..50 {
            let x = Tensor::vector(vec![(t as f64).sin() * 3.0, 2.0]);
            state = cell.step(&x, &state).unwrap().1;
            assert!(state.h.data().iter().all(|h| h.abs() < 1.0));
        }
    }

    fn step_loss(cell: &CellParams, tape: &mut Tape) -> Result<Var> {
        let bound = cell.bind(tape)?;
        let x = tape.constant(Tensor::vector(vec![0.4, -1.2, 0.7]))?;
        let state = CellState {
            h: Tensor::vector(vec![0.1, -0.3, 0.2, 0.05]),
            c: Tensor::vector(vec![-0.4, 0.6, 0.1, 0.0]),
        };
        let sv = StateVars::from_state(tape, &state)?;
        let (y, next) = bound.step(tape, x, &sv)?;
        let (y2, _) = bound.step(tape, x, &next)?;
        let target = tape.constant(Tensor::vector(vec![0.3, -0.2]))?;
        let l1 = tape.mse(y, target)?;
        let l2 = tape.mse(y2, target)?;
        tape.sum_scalars(&[l1, l2])
    }

    #[test]
    fn lstm_step_gradients_match_finite_differences() {
        let mut cell = CellParams::init(CellKind::Lstm, 0, 3, 4, 2, 5).unwrap();
        let r = finite_diff_check(&mut cell, 1e-5, 1e-5, step_loss).unwrap();
        assert!(r.passed(), "{r}");
    }

    #[test]
    fn irnn_step_gradients_match_finite_differences() {
        let mut cell = CellParams::init(CellKind::Irnn, 0, 3, 4, 2, 5).unwrap();
        let r = finite_diff_check(&mut cell, 1e-5, 1e-5, step_loss).unwrap();
        assert!(r.passed(), "{r}");
    }
}
