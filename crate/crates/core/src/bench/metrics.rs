//! Scoring: RMSE over matched pairs, RCS NMSE, confidence intervals.

use faer::Mat;
use serde::Serialize;

use crate::c64;
use crate::error::{Error, Result};
use crate::linalg::{frobenius_sq, CMat};
use crate::postproc::Assignment;

/// Root mean square of per-pair errors; `None` without any pair.
pub fn score_rmse(errors: &[f64]) -> Option<f64> {
    if errors.is_empty() {
        return None;
    }
    Some((errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt())
}

/// `|B_hat - B|_F^2 / |B|_F^2` for one trial.
pub fn score_nmse(b_hat: &CMat, b_true: &CMat) -> Result<f64> {
    if b_hat.nrows() != b_true.nrows() || b_hat.ncols() != b_true.ncols() {
        return Err(Error::Dimension(format!(
            "estimate is {}x{}, truth is {}x{}",
            b_hat.nrows(),
            b_hat.ncols(),
            b_true.nrows(),
            b_true.ncols()
        )));
    }
    let den = frobenius_sq(b_true.as_ref());
    if !(den > 0.0) {
        return Err(Error::ZeroNorm);
    }
    let diff = b_hat - b_true;
    Ok(frobenius_sq(diff.as_ref()) / den)
}

/// Stack estimate and truth rows along an assignment. Matched pairs share a
/// row, misses get a zero estimate row, false alarms a zero truth row.
pub fn aligned_rows(est_rows: &[Vec<c64>], truth: &CMat, assignment: &Assignment) -> Result<(CMat, CMat)> {
    let l = truth.ncols();
    if let Some(bad) = est_rows.iter().find(|r| r.len() != l) {
        return Err(Error::Dimension(format!("estimate row has {} snapshots, truth has {l}", bad.len())));
    }
    let n = assignment.pairs.len() + assignment.misses.len() + assignment.false_alarms.len();
    let mut b_hat = Mat::<c64>::zeros(n, l);
    let mut b_true = Mat::<c64>::zeros(n, l);
    let mut r = 0;
    for &(e, t) in &assignment.pairs {
        for c in 0..l {
            b_hat[(r, c)] = est_rows[e][c];
            b_true[(r, c)] = truth[(t, c)];
        }
        r += 1;
    }
    for &t in &assignment.misses {
        for c in 0..l {
            b_true[(r, c)] = truth[(t, c)];
        }
        r += 1;
    }
    for &e in &assignment.false_alarms {
        for c in 0..l {
            b_hat[(r, c)] = est_rows[e][c];
        }
        r += 1;
    }
    Ok((b_hat, b_true))
}

pub fn mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        None
    } else {
        Some(xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

/// Half-width of the normal 95% interval of the sample mean.
pub fn ci95(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs)?;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    Some(1.96 * (var / xs.len() as f64).sqrt())
}

/// Interval for an RMSE via the delta method on the mean squared error.
pub fn rmse_ci95(errors: &[f64]) -> Option<f64> {
    let rmse = score_rmse(errors)?;
    let sq: Vec<f64> = errors.iter().map(|e| e * e).collect();
    let half = ci95(&sq)?;
    if rmse > 0.0 { Some(half / (2.0 * rmse)) } else { Some(0.0) }
}

/// One line of the long results table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub sweep_axis: String,
    pub sweep_value: f64,
    pub estimator: String,
    pub metric: String,
    /// Empty when nothing could be scored.
    pub value: Option<f64>,
    pub trials: usize,
    pub ci95: Option<f64>,
}
