use std::collections::BTreeMap;

use super::Tensor;
use crate::error::{GrnnError, Result};

/// A named learnable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
    pub trainable: bool,
}

impl Parameter {
    pub fn new(name: impl Into<String>, tensor: Tensor) -> Self {
        Parameter {
            name: name.into(),
            tensor,
            trainable: true,
        }
    }
}

/// Anything that owns an ordered set of parameters with unique names.
pub trait Parameterized {
    fn params(&self) -> Vec<&Parameter>;
    fn params_mut(&mut self) -> Vec<&mut Parameter>;

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.tensor.len()).sum()
    }

    fn find_param_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        self.params_mut().into_iter().find(|p| p.name == name)
    }
}

/// Gradient of a scalar with respect to named parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamGrads(BTreeMap<String, Tensor>);

impl ParamGrads {
    pub fn new() -> Self {
        ParamGrads(BTreeMap::new())
    }

    pub fn insert(&mut self, name: impl Into<String>, grad: Tensor) {
        self.0.insert(name.into(), grad);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.0.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.0.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.0.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.0.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn global_norm(&self) -> f64 {
        self.0.values().map(Tensor::norm_sq).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, k: f64) {
        for g in self.0.values_mut() {
            g.scale_in_place(k);
        }
    }

    /// Rescales so the global L2 norm is at most `max_norm`; returns the pre-clip norm.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }

    pub fn all_finite(&self) -> bool {
        self.0.values().all(Tensor::all_finite)
    }
}

pub(crate) fn check_unique_names<'a>(names: impl IntoIterator<Item = &'a str>) -> Result<()> {
    let mut seen = std::collections::BTreeSet::new();
    for n in names {
        if !seen.insert(n) {
            return Err(GrnnError::InvalidArgument(format!(
                "duplicate parameter name {n:?}"
            )));
        }
    }
    Ok(())
}
