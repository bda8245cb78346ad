//! Permutation-invariant set functions over neighbor hidden states.
//!
//! Every summary maps a finite multiset of `d`-vectors (including the empty
//! set) to a fixed-size vector. The empty set maps to the zero vector for all
//! built-in functions, so an isolated node sees data input followed by zeros.
//!
//! Sums are taken over the coordinate values in sorted order, which makes the
//! result bit-identical under any reordering of the multiset; plain left folds
//! are not, because floating-point addition does not associate.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{GrnnError, Result};
use crate::ndmath::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SummaryFn {
    Sum,
    Mean,
    Max,
}

impl SummaryFn {
    pub const ALL: [SummaryFn; 3] = [SummaryFn::Sum, SummaryFn::Mean, SummaryFn::Max];

    pub fn name(self) -> &'static str {
        match self {
            SummaryFn::Sum => "sum",
            SummaryFn::Mean => "mean",
            SummaryFn::Max => "max",
        }
    }
}

impl fmt::Display for SummaryFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SummaryFn {
    type Err = GrnnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(SummaryFn::Sum),
            "mean" => Ok(SummaryFn::Mean),
            "max" => Ok(SummaryFn::Max),
            other => Err(GrnnError::InvalidArgument(format!(
                "unknown summary function {other:?} (expected sum, mean or max)"
            ))),
        }
    }
}

/// A relation graph paired with the set function applied to it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SummarySpec {
    pub relation: usize,
    pub func: SummaryFn,
    pub out_dim: usize,
}

impl SummarySpec {
    pub fn new(relation: usize, func: SummaryFn, hidden_dim: usize) -> Self {
        SummarySpec {
            relation,
            func,
            out_dim: hidden_dim,
        }
    }
}

pub fn total_summary_dim(specs: &[SummarySpec]) -> usize {
    specs.iter().map(|s| s.out_dim).sum()
}

/// Forward value of a set reduction, plus the per-coordinate argmax member for MAX.
pub(crate) struct Reduced {
    pub values: Vec<f64>,
    pub argmax: Vec<usize>,
}

pub(crate) fn reduce(func: SummaryFn, members: &[&[f64]], dim: usize) -> Result<Reduced> {
    for m in members {
        if m.len() != dim {
            return Err(GrnnError::dim("summary member", &[m.len()], &[dim]));
        }
    }
    if members.is_empty() {
        return Ok(Reduced {
            values: vec![0.0; dim],
            argmax: Vec::new(),
        });
    }
    let n = members.len();
    let mut values = Vec::with_capacity(dim);
    let mut argmax = Vec::new();
    match func {
        SummaryFn::Sum | SummaryFn::Mean => {
            let mut column = Vec::with_capacity(n);
            for j in 0..dim {
                column.clear();
                column.extend(members.iter().map(|m| m[j]));
                let s = sorted_sum(&mut column);
                values.push(if func == SummaryFn::Mean {
                    s / n as f64
                } else {
                    s
                });
            }
        }
        SummaryFn::Max => {
            argmax.reserve(dim);
            for j in 0..dim {
                let mut best = 0;
                for (i, m) in members.iter().enumerate().skip(1) {
                    // strict: ties keep the earliest member
                    if m[j] > members[best][j] {
                        best = i;
                    }
                }
                argmax.push(best);
                values.push(members[best][j]);
            }
        }
    }
    Ok(Reduced { values, argmax })
}

fn sorted_sum(column: &mut [f64]) -> f64 {
    if column.len() > 1 {
        column.sort_unstable_by(f64::total_cmp);
    }
    column.iter().sum()
}

/// Applies `spec.func` to a multiset of hidden states.
pub fn compute_summary(spec: &SummarySpec, states: &[Tensor]) -> Result<Tensor> {
    let members: Vec<&[f64]> = states.iter().map(Tensor::data).collect();
    for s in states {
        if s.ndim() != 1 {
            return Err(GrnnError::dim("summary member rank", s.shape(), &[spec.out_dim]));
        }
    }
    let r = reduce(spec.func, &members, spec.out_dim)?;
    Ok(Tensor::vector(r.values))
}
