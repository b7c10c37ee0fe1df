//! Off-grid sparse Bayesian learning.
//!
//! Each iteration runs the posterior update, the precision update, the three
//! offset updates (AoD, AoA, Doppler, in that order) and absorbs the offsets
//! into the grid. Rows whose precision grows far above the smallest one are
//! dropped from the active set; their posterior is the `z -> inf` limit
//! (zero mean, zero variance).

pub mod updates;

use std::path::Path;

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::c64;
use crate::dictionary::{Dictionary, Grid3D};
use crate::error::{Error, Result};
use crate::linalg::{select_columns, CMat};
use crate::postproc::TupleEstimate;
use crate::scene::SnapshotBatch;

pub use updates::{grid_update, hyperparam_update, offset_update, posterior_update, OffsetProblem, OffsetUpdate, Posterior};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SblConfig {
    pub a: f64,
    pub b: f64,
    pub noise_var: f64,
    pub max_iters: usize,
    /// Stop once the largest grid movement in an iteration falls below this.
    pub tol: f64,
    /// ... and the largest relative precision change on significant rows
    /// falls below this.
    pub z_tol: f64,
    pub prune_factor: f64,
    /// Offset bound as a fraction of the grid cell scale.
    pub offset_clip: f64,
    /// `false` runs plain on-grid SBL.
    pub offgrid: bool,
    /// Rows with `z > active_ratio * min z` leave the active set for good.
    pub active_ratio: f64,
    /// Rows with `z < refine_factor * min z` get offset updates.
    pub refine_factor: f64,
    /// Initial working noise variance as a fraction of the mean `|y|^2`.
    pub anneal_start: f64,
    /// Per-iteration shrink factor of the working noise variance; 1 keeps
    /// it at `noise_var` throughout.
    pub anneal_rate: f64,
    /// Project the atom direction out of the derivative columns before each
    /// offset solve.
    pub decouple: bool,
    /// Support rows closer than this many cell scales are merged.
    pub merge_radius: f64,
    pub pinv_tol: f64,
    pub psd_tol: f64,
}

impl Default for SblConfig {
    fn default() -> Self {
        Self {
            a: 1e-4,
            b: 1e-4,
            noise_var: 1.0,
            max_iters: 2000,
            tol: 1e-4,
            z_tol: 1e-3,
            prune_factor: 20.0,
            offset_clip: 0.5,
            offgrid: true,
            active_ratio: 1e4,
            refine_factor: 1e3,
            anneal_start: 1.0,
            anneal_rate: 0.95,
            decouple: true,
            merge_radius: 0.01,
            pinv_tol: 1e-10,
            psd_tol: 1e-8,
        }
    }
}

impl SblConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.b > 0.0) {
            return Err(Error::config("sbl.a/b", "Gamma hyperparameters must be positive"));
        }
        if !(self.noise_var > 0.0) {
            return Err(Error::config("sbl.noise_var", "must be positive"));
        }
        if !(self.offset_clip > 0.0 && self.offset_clip <= 1.0) {
            return Err(Error::config("sbl.offset_clip", "must lie in (0, 1]"));
        }
        if !(self.prune_factor > 1.0) {
            return Err(Error::config("sbl.prune_factor", "must exceed 1"));
        }
        if !(self.anneal_rate > 0.0 && self.anneal_rate <= 1.0) {
            return Err(Error::config("sbl.anneal_rate", "must lie in (0, 1]"));
        }
        if !(self.anneal_start > 0.0) {
            return Err(Error::config("sbl.anneal_start", "must be positive"));
        }
        if !(self.refine_factor >= 1.0) {
            return Err(Error::config("sbl.refine_factor", "must be at least 1"));
        }
        if !(self.active_ratio > self.prune_factor) {
            return Err(Error::config("sbl.active_ratio", "must exceed prune_factor"));
        }
        if !(self.merge_radius >= 0.0) {
            return Err(Error::config("sbl.merge_radius", "must be non-negative"));
        }
        if self.max_iters == 0 {
            return Err(Error::config("sbl.max_iters", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SblState {
    pub z: Vec<f64>,
    /// `G x L` posterior means (zero on inactive rows).
    pub mu: CMat,
    /// `G x G` posterior covariance (zero on inactive rows and columns).
    pub sigma: CMat,
    pub eps: [Vec<f64>; 3],
    pub grid: Grid3D,
    pub iter: usize,
    pub active: Vec<usize>,
}

impl SblState {
    pub fn min_z(&self) -> f64 {
        self.active.iter().map(|&g| self.z[g]).fold(f64::INFINITY, f64::min)
    }

    /// Active rows with `z < factor * min z`.
    pub fn significant(&self, factor: f64) -> Vec<usize> {
        let th = factor * self.min_z();
        self.active.iter().copied().filter(|&g| self.z[g] < th).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub iter: usize,
    pub max_move: f64,
    pub min_z: f64,
    pub max_z: f64,
    pub residual_norm: f64,
    pub n_active: usize,
    pub n_significant: usize,
}

pub fn write_trace_csv(path: &Path, trace: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in trace {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Row-sparse estimate: support, coefficient rows and parameter tuples.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseEstimate {
    /// Retained grid indices, strongest first.
    pub support: Vec<usize>,
    /// `G x L`, rows outside `support` exactly zero.
    pub b_hat: CMat,
    /// `(aod, aoa, doppler)` per support entry.
    pub tuples: Vec<(f64, f64, f64)>,
}

impl SparseEstimate {
    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn to_tuples(&self) -> Vec<TupleEstimate> {
        self.support
            .iter()
            .zip(&self.tuples)
            .map(|(&g, &(aod, aoa, doppler))| TupleEstimate {
                aod,
                aoa,
                doppler,
                rcs_row: (0..self.b_hat.ncols()).map(|l| self.b_hat[(g, l)]).collect(),
            })
            .collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let rows: Vec<serde_json::Value> = self
            .support
            .iter()
            .zip(&self.tuples)
            .map(|(&g, t)| {
                let b: Vec<[f64; 2]> = (0..self.b_hat.ncols()).map(|l| [self.b_hat[(g, l)].re, self.b_hat[(g, l)].im]).collect();
                serde_json::json!({
                    "index": g,
                    "aod_rad": t.0,
                    "aoa_rad": t.1,
                    "doppler_rad": t.2,
                    "rcs": b,
                })
            })
            .collect();
        serde_json::json!({ "schema_version": 1, "support": rows })
    }
}

/// Keep rows with `z < prune_factor * min z`, sorted by ascending `z`.
pub fn prune(z: &[f64], mu: &CMat, grid: &Grid3D, prune_factor: f64) -> SparseEstimate {
    let min_z = z.iter().copied().fold(f64::INFINITY, f64::min);
    let th = prune_factor * min_z;
    let mut support: Vec<usize> = (0..z.len()).filter(|&g| z[g] < th).collect();
    support.sort_by(|&a, &b| z[a].total_cmp(&z[b]).then(a.cmp(&b)));
    let mut b_hat = Mat::zeros(mu.nrows(), mu.ncols());
    for &g in &support {
        for l in 0..mu.ncols() {
            b_hat[(g, l)] = mu[(g, l)];
        }
    }
    let tuples = support.iter().map(|&g| grid.tuple(g)).collect();
    SparseEstimate { support, b_hat, tuples }
}

/// Fold support rows whose tuples lie within `radius` cell scales of a
/// stronger row into that row. Such rows carry the same atom, so only their
/// sum is identifiable.
pub fn merge_coincident(mut est: SparseEstimate, cell: [f64; 3], radius: f64) -> SparseEstimate {
    let mut keep: Vec<usize> = Vec::new();
    for i in 0..est.support.len() {
        let t = est.tuples[i];
        let near = keep.iter().copied().find(|&k| {
            let u = est.tuples[k];
            (t.0 - u.0).abs() <= radius * cell[0] && (t.1 - u.1).abs() <= radius * cell[1] && (t.2 - u.2).abs() <= radius * cell[2]
        });
        match near {
            Some(k) => {
                let (from, to) = (est.support[i], est.support[k]);
                for l in 0..est.b_hat.ncols() {
                    let v = est.b_hat[(from, l)];
                    est.b_hat[(to, l)] += v;
                    est.b_hat[(from, l)] = c64::new(0.0, 0.0);
                }
            }
            None => keep.push(i),
        }
    }
    est.support = keep.iter().map(|&i| est.support[i]).collect();
    est.tuples = keep.iter().map(|&i| est.tuples[i]).collect();
    est
}

#[derive(Debug, Clone)]
pub struct SblRun {
    pub estimate: SparseEstimate,
    pub state: SblState,
    pub trace: Vec<TraceRow>,
    pub converged: bool,
}

/// Normalized matched-filter row energy `sum_l |psi_g^H y_l|^2 / |psi_g|^4`.
fn matched_filter_energy(psi: &CMat, y: &CMat) -> Vec<f64> {
    let corr = psi.adjoint() * y;
    (0..psi.ncols())
        .map(|g| {
            let n2 = psi.col(g).squared_norm_l2();
            let e: f64 = (0..y.ncols()).map(|l| corr[(g, l)].norm_sqr()).sum();
            if n2 > 0.0 { e / (n2 * n2) } else { 0.0 }
        })
        .collect()
}

fn scatter(state: &mut SblState, post: &Posterior) {
    let g = state.z.len();
    let l = post.mu.ncols();
    state.mu = Mat::zeros(g, l);
    state.sigma = Mat::zeros(g, g);
    let act = &state.active;
    for (i, &gi) in act.iter().enumerate() {
        for c in 0..l {
            state.mu[(gi, c)] = post.mu[(i, c)];
        }
        for (j, &gj) in act.iter().enumerate() {
            state.sigma[(gi, gj)] = post.sigma[(i, j)];
        }
    }
}

pub fn run_sbl(batch: &SnapshotBatch, dict: &Dictionary, cfg: &SblConfig) -> Result<SblRun> {
    cfg.validate()?;
    let y = &batch.y;
    if y.nrows() != dict.n_rows() {
        return Err(Error::Dimension(format!(
            "snapshots have {} rows, dictionary has {}",
            y.nrows(),
            dict.n_rows()
        )));
    }
    let mut dict = dict.clone();
    let g = dict.n_atoms();
    let l = y.ncols() as f64;
    let mf = matched_filter_energy(&dict.psi, y);
    let mut state = SblState {
        z: mf.iter().map(|e| (cfg.a + l) / (cfg.b + e)).collect(),
        mu: Mat::zeros(g, y.ncols()),
        sigma: Mat::zeros(g, g),
        eps: [vec![0.0; g], vec![0.0; g], vec![0.0; g]],
        grid: dict.grid.clone(),
        iter: 0,
        active: (0..g).collect(),
    };
    let mut trace = Vec::new();
    let mut converged = false;
    let clip = cfg.offset_clip;
    // start from a fraction of the per-entry data power and shrink towards
    // the known noise level, so strong components settle before weak ones
    // and the noise get fitted
    let mut s2 = if cfg.anneal_rate < 1.0 {
        (cfg.anneal_start * y.squared_norm_l2() / (y.nrows() * y.ncols()) as f64).max(cfg.noise_var)
    } else {
        cfg.noise_var
    };
    for iter in 1..=cfg.max_iters {
        state.iter = iter;
        let d = select_columns(dict.psi.as_ref(), &state.active);
        let z_act: Vec<f64> = state.active.iter().map(|&i| state.z[i]).collect();
        let post = posterior_update(d.as_ref(), y.as_ref(), &z_act, s2)?;
        let annealing = s2 > cfg.noise_var;
        s2 = (s2 * cfg.anneal_rate).max(cfg.noise_var);
        let residual_norm = (y - &d * &post.mu).norm_l2();
        scatter(&mut state, &post);

        let z_new = hyperparam_update(post.mu.as_ref(), post.sigma.as_ref(), cfg.a, cfg.b);
        let sig_before = state.significant(cfg.prune_factor);
        let mut z_change = 0.0f64;
        for (k, &gi) in state.active.iter().enumerate() {
            if sig_before.binary_search(&gi).is_ok() {
                z_change = z_change.max((z_new[k] - state.z[gi]).abs() / state.z[gi]);
            }
            state.z[gi] = z_new[k];
        }
        let significant = state.significant(cfg.prune_factor);
        let refined = state.significant(cfg.refine_factor);

        let mut max_move = 0.0;
        if cfg.offgrid && !refined.is_empty() {
            let scale = dict.grid.cell_scale();
            let bounds = [scale[0] * clip, scale[1] * clip, scale[2] * clip];
            for dim in 0..3 {
                let upd = {
                    let prob = OffsetProblem {
                        dict: &dict,
                        y: y.as_ref(),
                        mu: state.mu.as_ref(),
                        sigma: state.sigma.as_ref(),
                        eps: [&state.eps[0], &state.eps[1], &state.eps[2]],
                        active: &state.active,
                        rows: &refined,
                        clip: Some(bounds),
                        pinv_tol: cfg.pinv_tol,
                        psd_tol: cfg.psd_tol,
                        decouple: cfg.decouple,
                    };
                    offset_update(&prob, dim)?
                };
                state.eps[dim] = upd.eps;
            }
            max_move = grid_update(&mut dict.grid, [&state.eps[0], &state.eps[1], &state.eps[2]]);
            for e in state.eps.iter_mut() {
                e.iter_mut().for_each(|v| *v = 0.0);
            }
            dict.refresh_columns(&refined);
            state.grid = dict.grid.clone();
        }

        let min_z = state.min_z();
        let max_z = state.active.iter().map(|&i| state.z[i]).fold(0.0, f64::max);
        trace.push(TraceRow {
            iter,
            max_move,
            min_z,
            max_z,
            residual_norm,
            n_active: state.active.len(),
            n_significant: significant.len(),
        });
        let keep = cfg.active_ratio * min_z;
        let z = &state.z;
        state.active.retain(|&i| z[i] <= keep);
        for gi in 0..g {
            if state.active.binary_search(&gi).is_err() {
                state.z[gi] = state.z[gi].max(keep);
            }
        }
        if iter > 1 && !annealing && max_move < cfg.tol && z_change < cfg.z_tol {
            converged = true;
            break;
        }
    }
    // final posterior on the converged grid
    let d = select_columns(dict.psi.as_ref(), &state.active);
    let z_act: Vec<f64> = state.active.iter().map(|&i| state.z[i]).collect();
    let post = posterior_update(d.as_ref(), y.as_ref(), &z_act, cfg.noise_var)?;
    scatter(&mut state, &post);
    let estimate = prune(&state.z, &state.mu, &state.grid, cfg.prune_factor);
    let estimate = merge_coincident(estimate, state.grid.cell_scale(), cfg.merge_radius);
    Ok(SblRun {
        estimate,
        state,
        trace,
        converged,
    })
}

#[cfg(test)]
mod tests;
