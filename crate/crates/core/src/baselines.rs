//! On-grid MMV baselines: simultaneous OMP and regularized M-FOCUSS.

use faer::{c64, Mat};
use serde::{Deserialize, Serialize};

use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::linalg::{hpd_inverse, select_columns, CMat};
use crate::scene::SnapshotBatch;
use crate::sbl::SparseEstimate;

/// SOMP stopping rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SompStop {
    /// Stop after selecting this many atoms.
    Sparsity(usize),
    /// Stop once the Frobenius residual drops to this value.
    Residual(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SompConfig {
    pub stop: SompStop,
}

#[derive(Debug, Clone)]
pub struct SompRun {
    pub estimate: SparseEstimate,
    /// Residual norm before the first and after each selection.
    pub residual_norms: Vec<f64>,
}

/// Least-squares fit of `Y` on the given columns via the normal equations.
fn ls_fit(a: &CMat, y: &CMat) -> Result<CMat> {
    let gram = a.adjoint() * a;
    let inv = hpd_inverse(gram.as_ref())?;
    Ok(inv * (a.adjoint() * y))
}

pub fn run_somp(batch: &SnapshotBatch, dict: &Dictionary, cfg: &SompConfig) -> Result<SompRun> {
    let y = &batch.y;
    let g = dict.n_atoms();
    let limit = g.min(dict.n_rows());
    let (k_max, tol) = match cfg.stop {
        SompStop::Sparsity(k) => {
            if k > limit {
                return Err(Error::SparsityTooLarge { k, limit });
            }
            (k, 0.0)
        }
        SompStop::Residual(t) => (limit, t),
    };
    let norms: Vec<f64> = (0..g).map(|j| dict.psi.col(j).norm_l2()).collect();
    let mut support: Vec<usize> = Vec::new();
    let mut resid = y.clone();
    let mut coef = Mat::<c64>::zeros(0, y.ncols());
    let mut residual_norms = vec![resid.norm_l2()];
    while support.len() < k_max && *residual_norms.last().unwrap() > tol {
        let corr = dict.psi.adjoint() * &resid;
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for j in 0..g {
            if support.contains(&j) || norms[j] == 0.0 {
                continue;
            }
            let e: f64 = (0..y.ncols()).map(|l| corr[(j, l)].norm_sqr()).sum::<f64>() / (norms[j] * norms[j]);
            if e > best.0 {
                best = (e, j);
            }
        }
        if best.1 == usize::MAX {
            break;
        }
        support.push(best.1);
        let a = select_columns(dict.psi.as_ref(), &support);
        coef = ls_fit(&a, y)?;
        resid = y - &a * &coef;
        residual_norms.push(resid.norm_l2());
    }
    let mut b_hat = Mat::zeros(g, y.ncols());
    for (k, &j) in support.iter().enumerate() {
        for l in 0..y.ncols() {
            b_hat[(j, l)] = coef[(k, l)];
        }
    }
    let tuples = support.iter().map(|&j| dict.grid.tuple(j)).collect();
    Ok(SompRun {
        estimate: SparseEstimate { support, b_hat, tuples },
        residual_norms,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FocussConfig {
    /// Diversity exponent in `(0, 1]`.
    pub p: f64,
    /// Tikhonov weight.
    pub reg: f64,
    pub max_iters: usize,
    /// Relative row-norm change that counts as converged.
    pub tol: f64,
    /// Rows below this fraction of the largest row norm are pruned.
    pub prune: f64,
}

impl Default for FocussConfig {
    fn default() -> Self {
        Self {
            p: 0.8,
            reg: 1.0,
            max_iters: 200,
            tol: 1e-6,
            prune: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FocussRun {
    pub estimate: SparseEstimate,
    /// `|Y - Psi X|_F^2 + (2 reg / p) sum_i |x_i|^p` after each iteration.
    pub objective: Vec<f64>,
    pub iterations: usize,
}

fn row_norms(x: &CMat) -> Vec<f64> {
    (0..x.nrows())
        .map(|i| (0..x.ncols()).map(|l| x[(i, l)].norm_sqr()).sum::<f64>().sqrt())
        .collect()
}

fn focuss_objective(psi: &CMat, x: &CMat, y: &CMat, cfg: &FocussConfig) -> f64 {
    let fit = (y - psi * x).squared_norm_l2();
    let div: f64 = row_norms(x).iter().map(|c| c.powf(cfg.p)).sum();
    fit + 2.0 * cfg.reg / cfg.p * div
}

/// Each iteration solves `min |Y - Psi W Q|^2 + reg |Q|^2` with
/// `W = diag(c_i^(1 - p/2))`, `c_i` the previous row norms, and sets `X = W Q`.
pub fn run_mfocuss(batch: &SnapshotBatch, dict: &Dictionary, cfg: &FocussConfig) -> Result<FocussRun> {
    if !(cfg.p > 0.0 && cfg.p <= 1.0) {
        return Err(Error::config("mfocuss.p", "must lie in (0, 1]"));
    }
    if !(cfg.reg > 0.0) {
        return Err(Error::config("mfocuss.reg", "must be positive"));
    }
    let y = &batch.y;
    let psi = &dict.psi;
    let (m, g) = (psi.nrows(), psi.ncols());
    let mut weights = vec![1.0; g];
    let mut x = Mat::<c64>::zeros(g, y.ncols());
    let mut prev_norms: Option<Vec<f64>> = None;
    let mut objective = Vec::new();
    let mut iterations = 0;
    for it in 1..=cfg.max_iters {
        iterations = it;
        let alive: Vec<usize> = (0..g).filter(|&i| weights[i] > 0.0).collect();
        let mut a = select_columns(psi.as_ref(), &alive);
        for (k, &i) in alive.iter().enumerate() {
            for r in 0..m {
                a[(r, k)] *= weights[i];
            }
        }
        // ridge solve in whichever space is smaller
        let q = if alive.len() <= m {
            let mut gram = a.adjoint() * &a;
            for r in 0..alive.len() {
                gram[(r, r)] += c64::new(cfg.reg, 0.0);
            }
            hpd_inverse(gram.as_ref())? * (a.adjoint() * y)
        } else {
            let mut gram = &a * a.adjoint();
            for r in 0..m {
                gram[(r, r)] += c64::new(cfg.reg, 0.0);
            }
            a.adjoint() * (hpd_inverse(gram.as_ref())? * y)
        };
        x = Mat::zeros(g, y.ncols());
        for (k, &i) in alive.iter().enumerate() {
            for l in 0..y.ncols() {
                x[(i, l)] = q[(k, l)] * weights[i];
            }
        }
        let norms = row_norms(&x);
        if norms.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged(it));
        }
        objective.push(focuss_objective(psi, &x, y, cfg));
        let max_norm = norms.iter().copied().fold(0.0, f64::max);
        for i in 0..g {
            weights[i] = if norms[i] > cfg.prune * max_norm { norms[i].powf(1.0 - cfg.p / 2.0) } else { 0.0 };
        }
        if let Some(prev) = &prev_norms {
            let diff: f64 = prev.iter().zip(&norms).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let base: f64 = prev.iter().map(|a| a * a).sum::<f64>().sqrt();
            if diff <= cfg.tol * base {
                break;
            }
        }
        prev_norms = Some(norms);
    }
    let norms = row_norms(&x);
    let max_norm = norms.iter().copied().fold(0.0, f64::max);
    let mut support: Vec<usize> = (0..g).filter(|&i| max_norm > 0.0 && norms[i] > cfg.prune * max_norm).collect();
    support.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
    let mut keep = vec![false; g];
    for &i in &support {
        keep[i] = true;
    }
    for i in 0..g {
        if !keep[i] {
            for l in 0..y.ncols() {
                x[(i, l)] = c64::new(0.0, 0.0);
            }
        }
    }
    let tuples = support.iter().map(|&j| dict.grid.tuple(j)).collect();
    Ok(FocussRun {
        estimate: SparseEstimate {
            support,
            b_hat: x,
            tuples,
        },
        objective,
        iterations,
    })
}
