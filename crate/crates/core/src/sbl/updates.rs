//! Individual block updates of the off-grid SBL iteration.

use faer::{c64, Mat, MatRef};

use crate::dictionary::{Dictionary, Grid3D};
use crate::error::{Error, Result};
use crate::linalg::{hpd_inverse, spd_solve, sym_pinv_solve, CMat};

/// Gaussian posterior of the RCS rows given the sensing matrix.
#[derive(Debug, Clone)]
pub struct Posterior {
    /// `G x G`.
    pub sigma: CMat,
    /// `G x L`, column `l` is `mu_l`.
    pub mu: CMat,
}

/// `Sigma = (D^H D / s2 + diag(z))^-1`, `U = Sigma D^H Y / s2`.
pub fn posterior_update(d: MatRef<'_, c64>, y: MatRef<'_, c64>, z: &[f64], noise_var: f64) -> Result<Posterior> {
    let g = d.ncols();
    if z.len() != g || y.nrows() != d.nrows() {
        return Err(Error::Dimension(format!(
            "posterior with D {}x{}, Y {}x{}, z of length {}",
            d.nrows(),
            d.ncols(),
            y.nrows(),
            y.ncols(),
            z.len()
        )));
    }
    let inv_s2 = 1.0 / noise_var;
    let mut prec = d.adjoint() * d;
    for j in 0..g {
        for i in 0..g {
            prec[(i, j)] *= inv_s2;
        }
        prec[(j, j)] += c64::new(z[j], 0.0);
    }
    let sigma = hpd_inverse(prec.as_ref())?;
    let dhy = d.adjoint() * y;
    let mut mu = &sigma * &dhy;
    for j in 0..mu.ncols() {
        for i in 0..g {
            mu[(i, j)] *= inv_s2;
        }
    }
    Ok(Posterior { sigma, mu })
}

/// `z_g = (a + L) / (b + sum_l |mu_gl|^2 + L Sigma_gg)`.
pub fn hyperparam_update(mu: MatRef<'_, c64>, sigma: MatRef<'_, c64>, a: f64, b: f64) -> Vec<f64> {
    let l = mu.ncols() as f64;
    (0..mu.nrows())
        .map(|g| {
            let energy: f64 = (0..mu.ncols()).map(|j| mu[(g, j)].norm_sqr()).sum();
            (a + l) / (b + energy + l * sigma[(g, g)].re)
        })
        .collect()
}

/// Result of one offset block update.
#[derive(Debug, Clone)]
pub struct OffsetUpdate {
    /// Full-length offsets (zero outside `rows`).
    pub eps: Vec<f64>,
    /// Rows that were updated.
    pub rows: Vec<usize>,
    /// Quadratic-form matrix restricted to `rows`.
    pub a: Mat<f64>,
    /// Linear term restricted to `rows`.
    pub p: Vec<f64>,
    /// Per updated row, whether the offset hit the clip bound.
    pub clipped: Vec<bool>,
}

impl OffsetUpdate {
    /// Surrogate `2 p^T e - e^T A e` on the updated rows.
    pub fn objective(&self, e: &[f64]) -> f64 {
        quad_objective(self.a.as_ref(), &self.p, e)
    }

    /// Offsets restricted to the updated rows.
    pub fn local(&self) -> Vec<f64> {
        self.rows.iter().map(|&g| self.eps[g]).collect()
    }

    /// Gradient `2 (p - A e)` of the surrogate.
    pub fn gradient(&self, e: &[f64]) -> Vec<f64> {
        let n = self.rows.len();
        (0..n)
            .map(|i| 2.0 * (self.p[i] - (0..n).map(|j| self.a[(i, j)] * e[j]).sum::<f64>()))
            .collect()
    }
}

/// Inputs shared by the three offset updates.
pub struct OffsetProblem<'a> {
    pub dict: &'a Dictionary,
    pub y: MatRef<'a, c64>,
    pub mu: MatRef<'a, c64>,
    pub sigma: MatRef<'a, c64>,
    /// Current offsets for all three dimensions (full length).
    pub eps: [&'a [f64]; 3],
    /// Columns with a nonzero posterior (sorted).
    pub active: &'a [usize],
    /// Rows whose offsets are updated (subset of `active`).
    pub rows: &'a [usize],
    /// Per-dimension clip bound; `None` disables clipping.
    pub clip: Option<[f64; 3]>,
    pub pinv_tol: f64,
    pub psd_tol: f64,
    /// Remove from each derivative column its projection on the atom. The
    /// removed part is a pure phase rotation the RCS row already absorbs;
    /// leaving it in couples the offset and RCS blocks and shrinks the steps.
    pub decouple: bool,
}

/// Maximize the expected-likelihood surrogate over the offsets of one
/// dimension (0 = AoD, 1 = AoA, 2 = Doppler), the other two held fixed.
pub fn offset_update(prob: &OffsetProblem<'_>, dim: usize) -> Result<OffsetUpdate> {
    let dict = prob.dict;
    let g_total = dict.n_atoms();
    let m = dict.n_rows();
    let act = prob.active;
    let rows = prob.rows;
    let l = prob.y.ncols();
    let s = rows.len();
    let mut eps = vec![0.0; g_total];
    if s == 0 {
        return Ok(OffsetUpdate {
            eps,
            rows: Vec::new(),
            a: Mat::zeros(0, 0),
            p: Vec::new(),
            clipped: Vec::new(),
        });
    }
    // sensing matrix on the active set with the other two offsets applied
    let mut d_act = Mat::<c64>::zeros(m, act.len());
    for (k, &g) in act.iter().enumerate() {
        let out = d_act.col_as_slice_mut(k);
        out.copy_from_slice(dict.psi.col_as_slice(g));
        for o in (0..3).filter(|&o| o != dim) {
            let e = prob.eps[o][g];
            if e != 0.0 {
                for (v, x) in out.iter_mut().zip(dict.xi(o).col_as_slice(g)) {
                    *v += x * e;
                }
            }
        }
    }
    let mu_act = Mat::from_fn(act.len(), l, |i, j| prob.mu[(act[i], j)]);
    let resid = prob.y - &d_act * &mu_act;
    let xi = dict.xi(dim);
    let mut xs = Mat::from_fn(m, s, |i, k| xi[(i, rows[k])]);
    if prob.decouple {
        for (k, &g) in rows.iter().enumerate() {
            let col = act.binary_search(&g).map_err(|_| Error::Dimension(format!("offset row {g} is not active")))?;
            let mut num = c64::new(0.0, 0.0);
            let mut den = 0.0;
            for i in 0..m {
                num += d_act[(i, col)].conj() * xs[(i, k)];
                den += d_act[(i, col)].norm_sqr();
            }
            if den > 0.0 {
                let coef = num / den;
                for i in 0..m {
                    let v = d_act[(i, col)] * coef;
                    xs[(i, k)] -= v;
                }
            }
        }
    }
    let xtx = xs.adjoint() * &xs;
    let xtr = xs.adjoint() * &resid;
    let dtx = d_act.adjoint() * &xs;

    let lf = l as f64;
    // second moment of the refined rows, E[b_i b_j^*] summed over snapshots
    let mu_r = Mat::from_fn(s, l, |i, c| prob.mu[(rows[i], c)]);
    let moment = &mu_r * mu_r.adjoint();
    let mut a = Mat::<f64>::zeros(s, s);
    for j in 0..s {
        let sig_j = prob.sigma.col(rows[j]);
        for i in 0..=j {
            let w = moment[(i, j)] + sig_j[rows[i]] * lf;
            let v = (xtx[(i, j)] * w.conj()).re;
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    let p: Vec<f64> = (0..s)
        .map(|i| {
            let gi = rows[i];
            let mut fit = 0.0;
            for c in 0..l {
                fit += (prob.mu[(gi, c)].conj() * xtr[(i, c)]).re;
            }
            let sig_i = prob.sigma.col(gi);
            let mut tr = c64::new(0.0, 0.0);
            for (k, &gk) in act.iter().enumerate() {
                tr += dtx[(k, i)].conj() * sig_i[gk];
            }
            fit - lf * tr.re
        })
        .collect();

    let mut local = solve_form(a.as_ref(), &p, prob)?;
    let mut clipped = vec![false; s];
    if let Some(bounds) = prob.clip {
        let bound = bounds[dim];
        // shrinking the free maximizer onto the box never loses surrogate
        // value, unlike the active-set pass below
        let peak = local.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let shrink = if peak > bound { bound / peak } else { 1.0 };
        let shrunk: Vec<f64> = local.iter().map(|v| v * shrink).collect();
        // fix the clipped entries at the bound and re-solve the rest
        for _ in 0..s {
            let mut changed = false;
            for i in 0..s {
                if !clipped[i] && local[i].abs() > bound {
                    clipped[i] = true;
                    local[i] = bound.copysign(local[i]);
                    changed = true;
                }
            }
            if !changed {
                break;
            }
            let free: Vec<usize> = (0..s).filter(|&i| !clipped[i]).collect();
            if free.is_empty() {
                break;
            }
            let af = Mat::<f64>::from_fn(free.len(), free.len(), |i, j| a[(free[i], free[j])]);
            let rhs: Vec<f64> = free
                .iter()
                .map(|&i| p[i] - (0..s).filter(|&j| clipped[j]).map(|j| a[(i, j)] * local[j]).sum::<f64>())
                .collect();
            let sub = solve_form(af.as_ref(), &rhs, prob)?;
            for (k, &i) in free.iter().enumerate() {
                local[i] = sub[k];
            }
        }
        let in_box = local.iter().all(|v| v.abs() <= bound);
        if !in_box || quad_objective(a.as_ref(), &p, &shrunk) > quad_objective(a.as_ref(), &p, &local) {
            for i in 0..s {
                clipped[i] = shrink < 1.0 && (shrunk[i].abs() - bound).abs() <= 1e-15 * bound;
            }
            local = shrunk;
        }
    }
    for (k, &g) in rows.iter().enumerate() {
        eps[g] = local[k];
    }
    Ok(OffsetUpdate {
        eps,
        rows: rows.to_vec(),
        a,
        p,
        clipped,
    })
}

fn quad_objective(a: MatRef<'_, f64>, p: &[f64], e: &[f64]) -> f64 {
    let n = p.len();
    let mut val = 0.0;
    for i in 0..n {
        val += 2.0 * p[i] * e[i];
        for j in 0..n {
            val -= e[i] * a[(i, j)] * e[j];
        }
    }
    val
}

/// Maximizer of `2 p^T e - e^T A e`. Well-conditioned forms go through
/// Cholesky; the rest get a truncated pseudo-inverse after a PSD check.
fn solve_form(a: MatRef<'_, f64>, p: &[f64], prob: &OffsetProblem<'_>) -> Result<Vec<f64>> {
    // the Cholesky estimate undershoots the true condition number, so keep
    // well clear of the truncation level
    let max_cond = 1e-2 / prob.pinv_tol;
    if let Some(x) = spd_solve(a, p, max_cond) {
        return Ok(x);
    }
    if let Some(x) = equilibrated_solve(a, p, prob.pinv_tol, max_cond) {
        return Ok(x);
    }
    let sol = sym_pinv_solve(a, p, prob.pinv_tol)?;
    if sol.min_eig < -prob.psd_tol * sol.max_eig.abs().max(1.0) {
        return Err(Error::IndefiniteOffsetForm(sol.min_eig));
    }
    Ok(sol.x)
}

/// Cholesky on the rows of `A` with non-negligible diagonal, after scaling
/// to unit diagonal. Refined rows routinely span tens of orders of magnitude
/// in weight, which defeats the unscaled condition estimate although the
/// scaled form is benign. Negligible rows keep a zero offset, as the
/// truncated pseudo-inverse would give them. Returns `None` unless
/// `cond(scaled) * weight range` stays below `max_cond`, which bounds the
/// condition of the kept block.
fn equilibrated_solve(a: MatRef<'_, f64>, p: &[f64], rel_tol: f64, max_cond: f64) -> Option<Vec<f64>> {
    let n = a.nrows();
    let diag: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    let dmax = diag.iter().copied().fold(0.0, f64::max);
    if !(dmax > 0.0) {
        return None;
    }
    let keep: Vec<usize> = (0..n).filter(|&i| diag[i] > rel_tol * dmax).collect();
    let dmin = keep.iter().map(|&i| diag[i]).fold(f64::INFINITY, f64::min);
    let range = dmax / dmin;
    if range >= max_cond {
        return None;
    }
    let scale: Vec<f64> = keep.iter().map(|&i| diag[i].sqrt().recip()).collect();
    let k = keep.len();
    let scaled = Mat::<f64>::from_fn(k, k, |i, j| a[(keep[i], keep[j])] * scale[i] * scale[j]);
    let rhs: Vec<f64> = (0..k).map(|i| p[keep[i]] * scale[i]).collect();
    let xs = spd_solve(scaled.as_ref(), &rhs, max_cond / range)?;
    let mut x = vec![0.0; n];
    for (i, &r) in keep.iter().enumerate() {
        x[r] = xs[i] * scale[i];
    }
    Some(x)
}

/// Absorb offsets into the grid, clamping to the spans. Returns the largest
/// absolute movement over all coordinates.
pub fn grid_update(grid: &mut Grid3D, eps: [&[f64]; 3]) -> f64 {
    let bounds = grid.spans.bounds();
    let mut moved = 0.0f64;
    for dim in 0..3 {
        let (lo, hi) = bounds[dim];
        let coord = grid.coord_mut(dim);
        for (g, e) in eps[dim].iter().enumerate() {
            if *e == 0.0 {
                continue;
            }
            let new = (coord[g] + e).clamp(lo, hi);
            moved = moved.max((new - coord[g]).abs());
            coord[g] = new;
        }
    }
    moved
}
