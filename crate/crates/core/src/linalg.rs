//! Small dense linear-algebra helpers shared by the estimators and bounds.
//!
//! Complex matrices are `faer::Mat<c64>`; all factorizations run
//! sequentially so results are bit-identical regardless of thread count.

use faer::linalg::solvers::{DenseSolveCore, Solve};
use faer::{c64, Mat, MatRef, Side};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type CMat = Mat<c64>;

/// Largest acceptable condition estimate for a Hermitian solve.
pub const MAX_CONDITION: f64 = 1e14;

#[inline]
pub fn cis(phase: f64) -> c64 {
    let (s, c) = phase.sin_cos();
    c64::new(c, s)
}

/// Circularly-symmetric complex Gaussian draw with total variance `var`.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R, var: f64) -> c64 {
    let scale = (0.5 * var).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    c64::new(scale * re, scale * im)
}

/// Inverse of a Hermitian positive definite matrix via Cholesky.
///
/// The condition number is estimated from the Cholesky diagonal; anything
/// above [`MAX_CONDITION`] (or a failed factorization) is reported as
/// [`Error::SingularPosterior`].
pub fn hpd_inverse(a: MatRef<'_, c64>) -> Result<CMat> {
    let n = a.nrows();
    if n == 0 {
        return Ok(Mat::zeros(0, 0));
    }
    let llt = a
        .llt(Side::Lower)
        .map_err(|_| Error::SingularPosterior(f64::INFINITY))?;
    let l = llt.L();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for i in 0..n {
        let d = l[(i, i)].re.abs();
        lo = lo.min(d);
        hi = hi.max(d);
    }
    let cond = if lo > 0.0 { (hi / lo).powi(2) } else { f64::INFINITY };
    if !cond.is_finite() || cond > MAX_CONDITION {
        return Err(Error::SingularPosterior(cond));
    }
    let mut inv = llt.inverse();
    // symmetrize to remove round-off asymmetry
    for j in 0..n {
        inv[(j, j)] = c64::new(inv[(j, j)].re, 0.0);
        for i in (j + 1)..n {
            let v = (inv[(i, j)] + inv[(j, i)].conj()) * 0.5;
            inv[(i, j)] = v;
            inv[(j, i)] = v.conj();
        }
    }
    Ok(inv)
}

/// Solve `A x = b` for real symmetric positive definite `A` by Cholesky.
///
/// Returns `None` when the factorization fails or the diagonal-based
/// condition estimate exceeds `max_cond`, so callers can fall back to a
/// spectral solve.
pub fn spd_solve(a: MatRef<'_, f64>, b: &[f64], max_cond: f64) -> Option<Vec<f64>> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n {
        return None;
    }
    if n == 0 {
        return Some(Vec::new());
    }
    let llt = a.llt(Side::Lower).ok()?;
    let l = llt.L();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for i in 0..n {
        let d = l[(i, i)].abs();
        lo = lo.min(d);
        hi = hi.max(d);
    }
    if !(lo > 0.0) || (hi / lo).powi(2) > max_cond {
        return None;
    }
    let rhs = Mat::from_fn(n, 1, |i, _| b[i]);
    let x = llt.solve(&rhs);
    Some((0..n).map(|i| x[(i, 0)]).collect())
}

/// Outcome of a truncated symmetric pseudo-inverse solve.
#[derive(Debug, Clone)]
pub struct PinvSolve {
    pub x: Vec<f64>,
    pub min_eig: f64,
    pub max_eig: f64,
}

/// Least-norm solution of `A x = b` for real symmetric `A`, discarding
/// eigenvalues below `rel_tol * max |eig|`.
pub fn sym_pinv_solve(a: MatRef<'_, f64>, b: &[f64], rel_tol: f64) -> Result<PinvSolve> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n {
        return Err(Error::Dimension(format!(
            "pinv solve on {}x{} with rhs of length {}",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    if n == 0 {
        return Ok(PinvSolve {
            x: Vec::new(),
            min_eig: 0.0,
            max_eig: 0.0,
        });
    }
    let evd = a
        .self_adjoint_eigen(Side::Lower)
        .map_err(|_| Error::Dimension("symmetric eigendecomposition failed".into()))?;
    let s = evd.S().column_vector();
    let u = evd.U();
    let max_abs = (0..n).map(|i| s[i].abs()).fold(0.0, f64::max);
    let cutoff = rel_tol * max_abs;
    let mut x = vec![0.0; n];
    for k in 0..n {
        let lambda = s[k];
        if lambda <= cutoff {
            continue;
        }
        let coef: f64 = (0..n).map(|i| u[(i, k)] * b[i]).sum::<f64>() / lambda;
        for (i, xi) in x.iter_mut().enumerate() {
            *xi += coef * u[(i, k)];
        }
    }
    Ok(PinvSolve {
        x,
        min_eig: s[0],
        max_eig: s[n - 1],
    })
}

/// Inverse of a real symmetric positive definite matrix, failing when the
/// eigenvalue condition number exceeds `max_cond`.
pub fn spd_inverse(a: MatRef<'_, f64>, max_cond: f64) -> std::result::Result<Mat<f64>, f64> {
    let n = a.nrows();
    if n == 0 {
        return Ok(Mat::zeros(0, 0));
    }
    let evd = a.self_adjoint_eigen(Side::Lower).map_err(|_| f64::INFINITY)?;
    let s = evd.S().column_vector();
    let u = evd.U();
    let lo = s[0];
    let hi = s[n - 1];
    let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !cond.is_finite() || cond > max_cond {
        return Err(cond);
    }
    Ok(Mat::from_fn(n, n, |i, j| {
        (0..n).map(|k| u[(i, k)] * u[(j, k)] / s[k]).sum()
    }))
}

/// Copy the listed columns of `a` into a new matrix.
pub fn select_columns(a: MatRef<'_, c64>, cols: &[usize]) -> CMat {
    let mut out = Mat::zeros(a.nrows(), cols.len());
    for (k, &j) in cols.iter().enumerate() {
        out.col_mut(k).copy_from(a.col(j));
    }
    out
}

/// Copy the listed rows of `a` into a new matrix.
pub fn select_rows(a: MatRef<'_, c64>, rows: &[usize]) -> CMat {
    Mat::from_fn(rows.len(), a.ncols(), |i, j| a[(rows[i], j)])
}

pub fn frobenius_sq(a: MatRef<'_, c64>) -> f64 {
    a.squared_norm_l2()
}
