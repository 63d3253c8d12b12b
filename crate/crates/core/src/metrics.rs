//! Regression and interval metrics shared by every evaluation report.

use serde::{Deserialize, Serialize};

use crate::error::{MineError, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mse: f64,
    pub rmse: f64,
    pub mae: f64,
    /// Mean of `pred - truth`; negative means underprediction.
    pub mbe: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pinball_per_level: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coverage: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub interval_sizes: Option<Vec<f64>>,
}

/// Elementwise metrics over equally sized flat buffers.
pub fn regression_metrics(pred: &[f64], truth: &[f64]) -> Result<MetricReport> {
    if pred.len() != truth.len() {
        return Err(MineError::shape(format!("{} predictions for {} targets", pred.len(), truth.len())));
    }
    if pred.is_empty() {
        return Err(MineError::InvalidInput("no values to score".into()));
    }
    let n = pred.len() as f64;
    let (mut se, mut ae, mut be) = (0.0, 0.0, 0.0);
    for (p, t) in pred.iter().zip(truth) {
        let e = p - t;
        se += e * e;
        ae += e.abs();
        be += e;
    }
    let mse = se / n;
    Ok(MetricReport { mse, rmse: mse.sqrt(), mae: ae / n, mbe: be / n, ..Default::default() })
}

/// Fraction of `draws` inside the closed interval `[lo, hi]`.
pub fn coverage(draws: &[f64], lo: f64, hi: f64) -> Result<f64> {
    if draws.is_empty() {
        return Err(MineError::InvalidInput("no draws to cover".into()));
    }
    if !(lo <= hi) {
        return Err(MineError::InvalidInput(format!("interval [{lo}, {hi}] is reversed")));
    }
    let inside = draws.iter().filter(|&&y| y >= lo && y <= hi).count();
    Ok(inside as f64 / draws.len() as f64)
}
