use std::fmt;

use super::{ParamGrads, Parameterized, Tape, Var};
use crate::error::{GrnnError, Result};

/// Denominator floor of the relative error, so near-zero gradients are compared absolutely.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct CoordinateError {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

impl fmt::Display for CoordinateError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}[{}]: analytic {:.9e} numeric {:.9e} (rel err {:.3e})",
            self.param, self.index, self.analytic, self.numeric, self.rel_error
        )
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub coordinates: usize,
    pub tolerance: f64,
    pub max_rel_error: f64,
    pub worst: Option<CoordinateError>,
    /// Every coordinate whose relative error exceeds the tolerance.
    pub failures: Vec<CoordinateError>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "gradient check: {} coordinates, max relative error {:.3e} (tolerance {:.1e}) -> {}",
            self.coordinates,
            self.max_rel_error,
            self.tolerance,
            if self.passed() { "PASS" } else { "FAIL" }
        )?;
        if let Some(w) = &self.worst {
            writeln!(f, "  worst: {w}")?;
        }
        for c in self.failures.iter().take(20) {
            writeln!(f, "  failed: {c}")?;
        }
        Ok(())
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Compares tape gradients of `objective` against central finite differences
/// over every trainable parameter coordinate of `model`.
///
/// `objective` must build the loss on the given tape, binding the model's
/// parameters itself, and be deterministic.
pub fn finite_diff_check<M, F>(model: &mut M, step: f64, tol: f64, mut objective: F) -> Result<GradCheckReport>
where
    M: Parameterized,
    F: FnMut(&M, &mut Tape) -> Result<Var>,
{
    let mut tape = Tape::checked();
    let loss = objective(model, &mut tape)?;
    let grads = tape.backward(loss)?.into_params();
    check_against(model, &grads, step, tol, objective)
}

/// Same as [`finite_diff_check`] but against caller-supplied analytic gradients.
pub fn check_against<M, F>(
    model: &mut M,
    analytic: &ParamGrads,
    step: f64,
    tol: f64,
    mut objective: F,
) -> Result<GradCheckReport>
where
    M: Parameterized,
    F: FnMut(&M, &mut Tape) -> Result<Var>,
{
    if step <= 0.0 || !step.is_finite() {
        return Err(GrnnError::InvalidArgument(format!("finite-difference step {step}")));
    }
    let names: Vec<(String, usize)> = model
        .params()
        .iter()
        .filter(|p| p.trainable)
        .map(|p| (p.name.clone(), p.tensor.len()))
        .collect();

    let mut report = GradCheckReport {
        coordinates: 0,
        tolerance: tol,
        max_rel_error: 0.0,
        worst: None,
        failures: Vec::new(),
    };
    for (name, len) in names {
        let grad = analytic
            .get(&name)
            .ok_or_else(|| GrnnError::Tape(format!("no analytic gradient for {name:?}")))?
            .clone();
        for i in 0..len {
            let orig = model.find_param_mut(&name).expect("name listed above").tensor.data()[i];
            let plus = eval_at(model, &name, i, orig + step, &mut objective)?;
            let minus = eval_at(model, &name, i, orig - step, &mut objective)?;
            model.find_param_mut(&name).expect("name listed above").tensor.data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * step);
            let a = grad.data()[i];
            let rel = relative_error(a, numeric);
            let coord = CoordinateError {
                param: name.clone(),
                index: i,
                analytic: a,
                numeric,
                rel_error: rel,
            };
            report.coordinates += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel;
                report.worst = Some(coord.clone());
            }
            if rel >= tol {
                report.failures.push(coord);
            }
        }
    }
    Ok(report)
}

fn eval_at<M, F>(model: &mut M, name: &str, i: usize, value: f64, objective: &mut F) -> Result<f64>
where
    M: Parameterized,
    F: FnMut(&M, &mut Tape) -> Result<Var>,
{
    model.find_param_mut(name).expect("caller checked").tensor.data_mut()[i] = value;
    let mut tape = Tape::no_grad();
    let loss = objective(model, &mut tape)?;
    let v = tape.value(loss);
    if !v.is_scalar() || !v.item().is_finite() {
        return Err(GrnnError::NonFinite {
            op: format!("objective with {name}[{i}] = {value}"),
        });
    }
    Ok(v.item())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndmath::{Parameter, Tensor};

    struct Lin(Vec<Parameter>);

    impl Parameterized for Lin {
        fn params(&self) -> Vec<&Parameter> {
            self.0.iter().collect()
        }
        fn params_mut(&mut self) -> Vec<&mut Parameter> {
            self.0.iter_mut().collect()
        }
    }

    fn linear_objective(m: &Lin, tape: &mut Tape) -> Result<Var> {
        let w = tape.param(&m.0[0])?;
        let a = tape.constant(Tensor::matrix(1, 3, vec![3.0, -1.0, 0.5])?)?;
        tape.matvec(a, w)
    }

    #[test]
    fn linear_function_agrees_exactly() {
        let mut m = Lin(vec![Parameter::new("w", Tensor::vector(vec![0.3, 0.1, -2.0]))]);
        let r = finite_diff_check(&mut m, 1e-5, 1e-9, linear_objective).unwrap();
        assert!(r.passed(), "{r}");
        assert_eq!(r.coordinates, 3);
        assert!(r.max_rel_error < 1e-9);
    }

    #[test]
    fn corrupted_gradient_is_flagged() {
        let mut m = Lin(vec![Parameter::new("w", Tensor::vector(vec![0.3, 0.1, -2.0]))]);
        let mut tape = Tape::new();
        let l = linear_objective(&m, &mut tape).unwrap();
        let mut g = tape.backward(l).unwrap().into_params();
        g.get_mut("w").unwrap().data_mut()[1] += 0.01;
        let r = check_against(&mut m, &g, 1e-5, 1e-6, linear_objective).unwrap();
        assert!(!r.passed());
        assert_eq!(r.failures.len(), 1);
        assert_eq!(r.failures[0].param, "w");
        assert_eq!(r.failures[0].index, 1);
        // parameters restored
        assert_eq!(m.0[0].tensor.data(), &[0.3, 0.1, -2.0]);
    }

    #[test]
    fn non_finite_objective_is_diagnosed() {
        let mut m = Lin(vec![Parameter::new("w", Tensor::vector(vec![1e308, 0.0, 0.0]))]);
        let err = finite_diff_check(&mut m, 1e300, 1e-6, linear_objective).unwrap_err();
        assert!(matches!(err, GrnnError::NonFinite { .. }), "{err}");
    }
}
