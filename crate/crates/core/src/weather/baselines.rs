//! Non-learned reference predictors for next-day average temperature.
//!
//! A prediction step `t` uses day `t` to predict day `t + 1`, so a dataset of
//! `T` days has steps `0..T-1`.

use std::ops::Range;

use nalgebra::{Matrix4, Vector4};

use super::clean::{CleanDataset, TAVG};
use crate::error::{GrnnError, Result};

fn check_steps(ds: &CleanDataset, steps: &Range<usize>) -> Result<()> {
    let max = ds.num_days().saturating_sub(1);
    if steps.is_empty() || steps.end > max {
        return Err(GrnnError::InvalidArgument(format!(
            "prediction steps {steps:?} outside 0..{max}"
        )));
    }
    Ok(())
}

/// Mean of `(tavg[t+1] - tavg[t])^2` over all stations and steps.
pub fn steady_state_mse(ds: &CleanDataset, steps: Range<usize>) -> Result<f64> {
    check_steps(ds, &steps)?;
    let mut sum = 0.0;
    for s in &ds.series {
        for t in steps.clone() {
            let e = s[t + 1][TAVG] - s[t][TAVG];
            sum += e * e;
        }
    }
    Ok(sum / (ds.num_stations() * steps.len()) as f64)
}

/// `tavg[t+1] ~ w . (tmin, tavg, tmax)[t] + bias`, shared by all stations.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearFit {
    pub weights: [f64; 3],
    pub bias: f64,
    /// True if the normal equations needed the ridge term.
    pub ridge: bool,
}

pub const RIDGE_LAMBDA: f64 = 1e-6;

impl LinearFit {
    pub fn predict(&self, x: &[f64; 3]) -> f64 {
        self.weights[0] * x[0] + self.weights[1] * x[1] + self.weights[2] * x[2] + self.bias
    }

    pub fn mse(&self, ds: &CleanDataset, steps: Range<usize>) -> Result<f64> {
        check_steps(ds, &steps)?;
        let mut sum = 0.0;
        for s in &ds.series {
            for t in steps.clone() {
                let e = s[t + 1][TAVG] - self.predict(&s[t]);
                sum += e * e;
            }
        }
        Ok(sum / (ds.num_stations() * steps.len()) as f64)
    }
}

/// Least-squares fit over `train` steps via the normal equations.
pub fn linear_baseline(ds: &CleanDataset, train: Range<usize>) -> Result<LinearFit> {
    check_steps(ds, &train)?;
    let mut xtx = Matrix4::<f64>::zeros();
    let mut xty = Vector4::<f64>::zeros();
    for s in &ds.series {
        for t in train.clone() {
            let x = Vector4::new(s[t][0], s[t][1], s[t][2], 1.0);
            xtx += x * x.transpose();
            xty += x * s[t + 1][TAVG];
        }
    }
    let (w, ridge) = match xtx.cholesky() {
        Some(ch) => (ch.solve(&xty), false),
        None => {
            log::info!("singular normal equations; adding ridge {RIDGE_LAMBDA}");
            let reg = xtx + Matrix4::identity() * RIDGE_LAMBDA;
            let ch = reg
                .cholesky()
                .ok_or_else(|| GrnnError::Data("linear baseline: normal equations not solvable".into()))?;
            (ch.solve(&xty), true)
        }
    };
    Ok(LinearFit {
        weights: [w[0], w[1], w[2]],
        bias: w[3],
        ridge,
    })
}
