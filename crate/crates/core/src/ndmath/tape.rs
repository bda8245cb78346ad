//! Reverse-mode differentiation tape.
//!
//! Operations are evaluated eagerly and appended to the tape in creation
//! order, so the tape is a DAG whose edges always point to earlier nodes.
//! `backward` walks it once in reverse, accumulating gradients additively
//! into every operand (a hidden state read by several neighbors collects the
//! sum of all its downstream contributions).

use super::{ParamGrads, Parameter, Tensor};
use crate::error::{GrnnError, Result};
use crate::summaries::{self, SummaryFn};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryOp {
    Tanh,
    Sigmoid,
    Relu,
}

/// Operation tag plus whatever the backward rule needs.
#[derive(Clone, Debug)]
pub enum OpKind {
    Constant,
    Param(usize),
    MatVec(Var, Var),
    Binary(BinaryOp, Var, Var),
    Unary(UnaryOp, Var),
    Concat { parts: Vec<Var>, offsets: Vec<usize> },
    Reduce { func: SummaryFn, parts: Vec<Var>, argmax: Vec<usize> },
    Mse(Var, Var),
    SumScalars(Vec<Var>),
    Scale(Var, f64),
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Constant => "constant",
            OpKind::Param(_) => "param",
            OpKind::MatVec(..) => "matvec",
            OpKind::Binary(BinaryOp::Add, ..) => "add",
            OpKind::Binary(BinaryOp::Sub, ..) => "sub",
            OpKind::Binary(BinaryOp::Mul, ..) => "mul",
            OpKind::Unary(UnaryOp::Tanh, _) => "tanh",
            OpKind::Unary(UnaryOp::Sigmoid, _) => "sigmoid",
            OpKind::Unary(UnaryOp::Relu, _) => "relu",
            OpKind::Concat { .. } => "concat",
            OpKind::Reduce { .. } => "reduce",
            OpKind::Mse(..) => "mse_loss",
            OpKind::SumScalars(_) => "sum",
            OpKind::Scale(..) => "scale",
        }
    }
}

#[derive(Clone, Debug)]
pub struct TapeNode {
    pub op: OpKind,
    pub value: Tensor,
}

/// Result of a backward pass: gradients for every node reachable from the loss
/// and, by name, for every parameter registered on the tape.
#[derive(Debug)]
pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
    params: ParamGrads,
}

impl Gradients {
    /// Gradient with respect to an arbitrary node; `None` if the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.nodes.get(v.0).and_then(Option::as_ref)
    }

    pub fn params(&self) -> &ParamGrads {
        &self.params
    }

    pub fn into_params(self) -> ParamGrads {
        self.params
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<TapeNode>,
    params: Vec<(String, Var)>,
    checked: bool,
    recording: bool,
    consumed: bool,
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            recording: true,
            ..Default::default()
        }
    }

    /// Tape that scans every op output for NaN/Inf.
    pub fn checked() -> Self {
        Tape {
            checked: true,
            recording: true,
            ..Default::default()
        }
    }

    /// Value-only tape: same arithmetic, no backward bookkeeping.
    pub fn no_grad() -> Self {
        Tape::default()
    }

    pub fn with_checks(mut self, checked: bool) -> Self {
        self.checked = checked;
        self
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, v: Var) -> &TapeNode {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: OpKind, value: Tensor) -> Result<Var> {
        if self.checked && !value.all_finite() {
            return Err(GrnnError::NonFinite {
                op: op.name().to_string(),
            });
        }
        let op = if self.recording || matches!(op, OpKind::Param(_)) {
            op
        } else {
            OpKind::Constant
        };
        self.nodes.push(TapeNode { op, value });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push(OpKind::Constant, value)
    }

    /// Registers a parameter as a differentiable leaf.
    pub fn param(&mut self, p: &Parameter) -> Result<Var> {
        if self.params.iter().any(|(n, _)| n == &p.name) {
            return Err(GrnnError::Tape(format!(
                "parameter {:?} registered twice",
                p.name
            )));
        }
        let idx = self.params.len();
        let v = self.push(OpKind::Param(idx), p.tensor.clone())?;
        self.params.push((p.name.clone(), v));
        Ok(v)
    }

    pub fn matvec(&mut self, m: Var, v: Var) -> Result<Var> {
        let (ms, vs) = (self.value(m).shape(), self.value(v).shape());
        if ms.len() != 2 || vs.len() != 1 || ms[1] != vs[0] {
            return Err(GrnnError::dim("matvec", ms, vs));
        }
        let (rows, cols) = (ms[0], ms[1]);
        let md = self.value(m).data();
        let vd = self.value(v).data();
        let out: Vec<f64> = (0..rows)
            .map(|i| {
                md[i * cols..(i + 1) * cols]
                    .iter()
                    .zip(vd)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect();
        self.push(OpKind::MatVec(m, v), Tensor::vector(out))
    }

    pub fn binary(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if !av.same_shape(bv) {
            return Err(GrnnError::dim(format!("{op:?}"), av.shape(), bv.shape()));
        }
        let f = match op {
            BinaryOp::Add => |x: f64, y: f64| x + y,
            BinaryOp::Sub => |x: f64, y: f64| x - y,
            BinaryOp::Mul => |x: f64, y: f64| x * y,
        };
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        self.push(OpKind::Binary(op, a, b), value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn unary(&mut self, op: UnaryOp, a: Var) -> Result<Var> {
        let av = self.value(a);
        let f = match op {
            UnaryOp::Tanh => f64::tanh,
            UnaryOp::Sigmoid => sigmoid,
            UnaryOp::Relu => |x: f64| if x > 0.0 { x } else { 0.0 },
        };
        let value = Tensor::new(av.shape().to_vec(), av.data().iter().map(|&x| f(x)).collect())?;
        self.push(OpKind::Unary(op, a), value)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Tanh, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Sigmoid, a)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Relu, a)
    }

    /// Concatenates 1-D tensors in order.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(GrnnError::Tape("concat of an empty part list".into()));
        }
        let mut data = Vec::new();
        let mut offsets = Vec::with_capacity(parts.len());
        for &p in parts {
            let v = self.value(p);
            if v.ndim() != 1 {
                return Err(GrnnError::dim("concat part", v.shape(), &[v.len()]));
            }
            offsets.push(data.len());
            data.extend_from_slice(v.data());
        }
        self.push(
            OpKind::Concat {
                parts: parts.to_vec(),
                offsets,
            },
            Tensor::vector(data),
        )
    }

    /// Permutation-invariant reduction of a multiset of `dim`-vectors.
    pub fn reduce(&mut self, func: SummaryFn, parts: &[Var], dim: usize) -> Result<Var> {
        let members: Vec<&[f64]> = parts.iter().map(|&p| self.value(p).data()).collect();
        for &p in parts {
            if self.value(p).ndim() != 1 {
                return Err(GrnnError::dim("summary member rank", self.value(p).shape(), &[dim]));
            }
        }
        let r = summaries::reduce(func, &members, dim)?;
        self.push(
            OpKind::Reduce {
                func,
                parts: parts.to_vec(),
                argmax: r.argmax,
            },
            Tensor::vector(r.values),
        )
    }

    /// Mean over coordinates of squared differences.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        if !p.same_shape(t) || p.is_empty() {
            return Err(GrnnError::dim("mse_loss", p.shape(), t.shape()));
        }
        let q = p.len() as f64;
        let s: f64 = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        self.push(OpKind::Mse(pred, target), Tensor::scalar(s / q))
    }

    /// Left-to-right sum of scalar nodes.
    pub fn sum_scalars(&mut self, parts: &[Var]) -> Result<Var> {
        let mut s = 0.0;
        for &p in parts {
            let v = self.value(p);
            if !v.is_scalar() {
                return Err(GrnnError::dim("sum_scalars", v.shape(), &[]));
            }
            s += v.item();
        }
        self.push(OpKind::SumScalars(parts.to_vec()), Tensor::scalar(s))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        let av = self.value(a);
        let value = Tensor::new(av.shape().to_vec(), av.data().iter().map(|x| x * k).collect())?;
        self.push(OpKind::Scale(a, k), value)
    }

    /// Back-propagates from a scalar loss. Consumes the tape: a second call fails.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if !self.recording {
            return Err(GrnnError::Tape("backward on a no-grad tape".into()));
        }
        if self.consumed {
            return Err(GrnnError::Tape("backward called twice on the same tape".into()));
        }
        if !self.value(loss).is_scalar() {
            return Err(GrnnError::Tape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.consumed = true;

        let n = loss.0 + 1;
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));

        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                OpKind::Constant | OpKind::Param(_) => {}
                OpKind::MatVec(m, v) => {
                    let mv = self.value(*m);
                    let vv = self.value(*v);
                    let cols = mv.shape()[1];
                    let gd = g.data();
                    let mut dm = vec![0.0; mv.len()];
                    let mut dv = vec![0.0; cols];
                    for (r, &gr) in gd.iter().enumerate() {
                        let row = &mv.data()[r * cols..(r + 1) * cols];
                        let drow = &mut dm[r * cols..(r + 1) * cols];
                        for j in 0..cols {
                            drow[j] = gr * vv.data()[j];
                            dv[j] += row[j] * gr;
                        }
                    }
                    let dm = Tensor::new(mv.shape().to_vec(), dm)?;
                    accumulate(&mut grads, *m, dm);
                    accumulate(&mut grads, *v, Tensor::vector(dv));
                }
                OpKind::Binary(op, a, b) => match op {
                    BinaryOp::Add => {
                        accumulate(&mut grads, *a, g.clone());
                        accumulate(&mut grads, *b, g.clone());
                    }
                    BinaryOp::Sub => {
                        accumulate(&mut grads, *a, g.clone());
                        let mut neg = g.clone();
                        neg.scale_in_place(-1.0);
                        accumulate(&mut grads, *b, neg);
                    }
                    BinaryOp::Mul => {
                        let da = zip_map(&g, self.value(*b), |g, y| g * y);
                        let db = zip_map(&g, self.value(*a), |g, x| g * x);
                        accumulate(&mut grads, *a, da);
                        accumulate(&mut grads, *b, db);
                    }
                },
                OpKind::Unary(op, a) => {
                    let d = match op {
                        UnaryOp::Tanh => zip_map(&g, &node.value, |g, y| g * (1.0 - y * y)),
                        UnaryOp::Sigmoid => zip_map(&g, &node.value, |g, y| g * y * (1.0 - y)),
                        UnaryOp::Relu => {
                            zip_map(&g, self.value(*a), |g, x| if x > 0.0 { g } else { 0.0 })
                        }
                    };
                    accumulate(&mut grads, *a, d);
                }
                OpKind::Concat { parts, offsets } => {
                    for (p, &off) in parts.iter().zip(offsets) {
                        let len = self.value(*p).len();
                        let slice = g.data()[off..off + len].to_vec();
                        accumulate(&mut grads, *p, Tensor::vector(slice));
                    }
                }
                OpKind::Reduce { func, parts, argmax } => match func {
                    SummaryFn::Sum => {
                        for p in parts {
                            accumulate(&mut grads, *p, g.clone());
                        }
                    }
                    SummaryFn::Mean => {
                        let mut share = g.clone();
                        share.scale_in_place(1.0 / parts.len() as f64);
                        for p in parts {
                            accumulate(&mut grads, *p, share.clone());
                        }
                    }
                    SummaryFn::Max => {
                        let dim = g.len();
                        let mut routed: Vec<Option<Vec<f64>>> = vec![None; parts.len()];
                        for (j, &k) in argmax.iter().enumerate() {
                            routed[k].get_or_insert_with(|| vec![0.0; dim])[j] = g.data()[j];
                        }
                        for (p, r) in parts.iter().zip(routed) {
                            if let Some(r) = r {
                                accumulate(&mut grads, *p, Tensor::vector(r));
                            }
                        }
                    }
                },
                OpKind::Mse(pred, target) => {
                    let gs = g.item();
                    let (p, t) = (self.value(*pred), self.value(*target));
                    let k = 2.0 * gs / p.len() as f64;
                    let dp = zip_map(p, t, |a, b| k * (a - b));
                    let mut dt = dp.clone();
                    dt.scale_in_place(-1.0);
                    accumulate(&mut grads, *pred, dp);
                    accumulate(&mut grads, *target, dt);
                }
                OpKind::SumScalars(parts) => {
                    for p in parts {
                        accumulate(&mut grads, *p, Tensor::full(self.value(*p).shape(), g.item()));
                    }
                }
                OpKind::Scale(a, k) => {
                    let mut d = g.clone();
                    d.scale_in_place(*k);
                    accumulate(&mut grads, *a, d);
                }
            }
            grads[i] = Some(g);
        }

        let mut params = ParamGrads::new();
        for (name, v) in &self.params {
            let g = grads[v.0]
                .clone()
                .unwrap_or_else(|| Tensor::zeros(self.value(*v).shape()));
            params.insert(name.clone(), g);
        }
        Ok(Gradients {
            nodes: grads,
            params,
        })
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("zip_map operands share a shape")
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec_const(t: &mut Tape, v: &[f64]) -> Var {
        t.constant(Tensor::vector(v.to_vec())).unwrap()
    }

    #[test]
    fn matvec_hand_checked() {
        let mut t = Tape::new();
        let m = t
            .constant(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap())
            .unwrap();
        let v = vec_const(&mut t, &[1.0, 1.0]);
        let out = t.matvec(m, v).unwrap();
        assert_eq!(t.value(out).data(), &[3.0, 7.0]);
    }

    #[test]
    fn matvec_identity() {
        let mut t = Tape::new();
        let m = t.constant(Tensor::identity(3)).unwrap();
        let v = vec_const(&mut t, &[0.5, -2.0, 7.0]);
        let out = t.matvec(m, v).unwrap();
        assert_eq!(t.value(out).data(), &[0.5, -2.0, 7.0]);
    }

    #[test]
    fn matvec_shape_error_names_both_shapes() {
        let mut t = Tape::new();
        let m = t.constant(Tensor::zeros(&[2, 3])).unwrap();
        let v = vec_const(&mut t, &[1.0, 1.0]);
        let err = t.matvec(m, v).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[2]"), "{err}");
    }

    #[test]
    fn relu_and_tanh_values() {
        let mut t = Tape::new();
        let v = vec_const(&mut t, &[-1.0, 0.0, 2.0]);
        let r = t.relu(v).unwrap();
        assert_eq!(t.value(r).data(), &[0.0, 0.0, 2.0]);
        let z = vec_const(&mut t, &[0.0]);
        let th = t.tanh(z).unwrap();
        assert_eq!(t.value(th).data(), &[0.0]);
    }

    #[test]
    fn relu_gradient_at_zero_is_zero() {
        let mut t = Tape::new();
        let v = vec_const(&mut t, &[0.0, 1.0]);
        let r = t.relu(v).unwrap();
        let s = t.reduce(SummaryFn::Sum, &[r], 2).unwrap();
        let parts = [s];
        let c = t.concat(&parts).unwrap();
        let zero = vec_const(&mut t, &[0.0, 0.0]);
        let l = t.mse(c, zero).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.wrt(v).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn binary_shape_mismatch() {
        let mut t = Tape::new();
        let a = vec_const(&mut t, &[1.0]);
        let b = vec_const(&mut t, &[1.0, 2.0]);
        assert!(t.add(a, b).is_err());
    }

    #[test]
    fn concat_values_and_errors() {
        let mut t = Tape::new();
        let a = vec_const(&mut t, &[1.0, 2.0]);
        let b = vec_const(&mut t, &[3.0]);
        let c = t.concat(&[a, b]).unwrap();
        assert_eq!(t.value(c).data(), &[1.0, 2.0, 3.0]);
        let single = t.concat(&[a]).unwrap();
        assert_eq!(t.value(single), t.value(a));
        assert!(t.concat(&[]).is_err());
    }

    #[test]
    fn mse_values() {
        let mut t = Tape::new();
        let p = vec_const(&mut t, &[1.0, 1.0]);
        let z = vec_const(&mut t, &[0.0, 0.0]);
        let l = t.mse(p, z).unwrap();
        assert_eq!(t.value(l).item(), 1.0);
        let l0 = t.mse(p, p).unwrap();
        assert_eq!(t.value(l0).item(), 0.0);
        let short = vec_const(&mut t, &[0.0]);
        assert!(t.mse(p, short).is_err());
    }

    #[test]
    fn quadratic_gradient() {
        // (w - 3)^2 at w = 5 -> 4
        let mut t = Tape::new();
        let w = t.param(&Parameter::new("w", Tensor::vector(vec![5.0]))).unwrap();
        let three = vec_const(&mut t, &[3.0]);
        let l = t.mse(w, three).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.params().get("w").unwrap().data(), &[4.0]);
    }

    #[test]
    fn unreachable_param_gets_zero() {
        let mut t = Tape::new();
        let w = t.param(&Parameter::new("w", Tensor::vector(vec![5.0]))).unwrap();
        let _p = t.param(&Parameter::new("p", Tensor::vector(vec![1.0, 2.0]))).unwrap();
        let zero = vec_const(&mut t, &[0.0]);
        let l = t.mse(w, zero).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.params().get("p").unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_guards() {
        let mut t = Tape::new();
        let v = vec_const(&mut t, &[1.0, 2.0]);
        assert!(t.backward(v).is_err(), "non-scalar");
        let s = t.constant(Tensor::scalar(1.0)).unwrap();
        assert!(t.backward(s).is_ok());
        assert!(t.backward(s).is_err(), "second call");
        let mut ng = Tape::no_grad();
        let s = ng.constant(Tensor::scalar(1.0)).unwrap();
        assert!(ng.backward(s).is_err());
    }

    #[test]
    fn checked_mode_rejects_non_finite() {
        let mut t = Tape::checked();
        let a = vec_const(&mut t, &[f64::MAX]);
        let b = vec_const(&mut t, &[f64::MAX]);
        assert!(matches!(t.add(a, b), Err(GrnnError::NonFinite { .. })));
        let mut u = Tape::new();
        let a = vec_const(&mut u, &[f64::MAX]);
        let b = vec_const(&mut u, &[f64::MAX]);
        assert!(u.add(a, b).is_ok());
    }

    #[test]
    fn fan_out_accumulates() {
        // l = mse(a + a, 0) with a = [1] -> l = 4a^2, dl/da = 8
        let mut t = Tape::new();
        let a = t.param(&Parameter::new("a", Tensor::vector(vec![1.0]))).unwrap();
        let s = t.add(a, a).unwrap();
        let z = vec_const(&mut t, &[0.0]);
        let l = t.mse(s, z).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.params().get("a").unwrap().data(), &[8.0]);
    }
}
