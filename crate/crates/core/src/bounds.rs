//! Cramér-Rao bounds for the angle / Doppler / velocity parameters and the
//! Bayesian bound for the RCS rows.
//!
//! Parameters are ordered `[theta_1..W, phi_1..W, omega_1..W]` in the
//! Fisher information matrix.

use std::f64::consts::PI;

use faer::{c64, Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::dictionary::atom_with_derivatives;
use crate::error::{Error, Result};
use crate::linalg::{hpd_inverse, spd_inverse, CMat};
use crate::scene::{ComponentKind, GroundTruth, WaveformConfig};

/// Largest acceptable condition number of a nuisance block.
pub const MAX_NUISANCE_COND: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Param {
    Theta,
    Phi,
    Omega,
}

impl Param {
    pub fn index(self) -> usize {
        match self {
            Param::Theta => 0,
            Param::Phi => 1,
            Param::Omega => 2,
        }
    }

    fn others(self) -> [usize; 2] {
        match self {
            Param::Theta => [1, 2],
            Param::Phi => [0, 2],
            Param::Omega => [0, 1],
        }
    }
}

/// How the RCS enters the Fisher information.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RcsMode {
    /// Use the realized coefficients of the trial.
    #[default]
    Realized,
    /// Replace `sum_l conj(b_el) b_fl` by its expectation `L var_e [e == f]`.
    Expected,
}

/// True parameters of one scatterer entering the bound.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundComponent {
    pub aod: f64,
    pub aoa: f64,
    pub doppler: f64,
    pub rcs: Vec<c64>,
    pub rcs_var: f64,
}

impl BoundComponent {
    /// Targets of a simulated batch, with their effective coefficients.
    pub fn targets_of(truth: &GroundTruth, target_var: f64) -> Vec<Self> {
        truth
            .components
            .iter()
            .filter(|c| c.geometry.kind == ComponentKind::Target)
            .map(|c| Self {
                aod: c.geometry.aod,
                aoa: c.geometry.aoa,
                doppler: c.geometry.doppler,
                rcs: c.effective_rcs.clone(),
                rcs_var: target_var,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fim {
    /// `3W x 3W`.
    pub j: Mat<f64>,
    pub n_params: usize,
}

impl Fim {
    pub fn from_matrix(j: Mat<f64>) -> Result<Self> {
        if j.nrows() != j.ncols() || j.nrows() % 3 != 0 {
            return Err(Error::Dimension(format!("FIM must be 3W x 3W, got {}x{}", j.nrows(), j.ncols())));
        }
        let n_params = j.nrows() / 3;
        Ok(Self { j, n_params })
    }

    /// Block `(a, b)` with `a, b` in `0..3`.
    pub fn block(&self, a: usize, b: usize) -> Mat<f64> {
        let w = self.n_params;
        Mat::from_fn(w, w, |i, k| self.j[(a * w + i, b * w + k)])
    }

    fn sub(&self, rows: &[usize], cols: &[usize]) -> Mat<f64> {
        let w = self.n_params;
        let idx = |blocks: &[usize]| -> Vec<usize> { blocks.iter().flat_map(|b| (0..w).map(move |i| b * w + i)).collect() };
        let (r, c) = (idx(rows), idx(cols));
        Mat::from_fn(r.len(), c.len(), |i, k| self.j[(r[i], c[k])])
    }
}

/// `[J]_ef = (2 / s2) Re sum_l conj(b_el) b_fl (d psi_e)^H (d psi_f)`.
pub fn fim_blocks(
    comps: &[BoundComponent],
    cfg: &WaveformConfig,
    tx: &CMat,
    noise_var: f64,
    mode: RcsMode,
) -> Result<Fim> {
    let w = comps.len();
    if w == 0 {
        return Err(Error::Dimension("no components for the Fisher information".into()));
    }
    let l = comps[0].rcs.len();
    if comps.iter().any(|c| c.rcs.len() != l) {
        return Err(Error::Dimension("RCS rows differ in length".into()));
    }
    let m = cfg.snapshot_len();
    // derivative columns ordered [theta.., phi.., omega..]
    let mut dpsi = Mat::<c64>::zeros(m, 3 * w);
    for (e, c) in comps.iter().enumerate() {
        let set = atom_with_derivatives(c.aod, c.aoa, c.doppler, cfg, tx);
        for i in 0..m {
            dpsi[(i, e)] = set.d_theta[i];
            dpsi[(i, w + e)] = set.d_phi[i];
            dpsi[(i, 2 * w + e)] = set.d_omega[i];
        }
    }
    let gram = dpsi.adjoint() * &dpsi;
    let mut coef = Mat::<c64>::zeros(w, w);
    for e in 0..w {
        for f in 0..w {
            coef[(e, f)] = match mode {
                RcsMode::Realized => (0..l).map(|k| comps[e].rcs[k].conj() * comps[f].rcs[k]).sum(),
                RcsMode::Expected if e == f => c64::new(l as f64 * comps[e].rcs_var, 0.0),
                RcsMode::Expected => c64::new(0.0, 0.0),
            };
        }
    }
    let scale = 2.0 / noise_var;
    let j = Mat::<f64>::from_fn(3 * w, 3 * w, |r, c| scale * (coef[(r % w, c % w)] * gram[(r, c)]).re);
    let j = Mat::<f64>::from_fn(3 * w, 3 * w, |r, c| 0.5 * (j[(r, c)] + j[(c, r)]));
    Fim::from_matrix(j)
}

/// Inverse of the 2x2 block nuisance matrix `[[A, B], [B^T, C]]` through
/// `W = (A - B C^-1 B^T)^-1`.
pub fn partitioned_inverse(a: MatRef<'_, f64>, b: MatRef<'_, f64>, c: MatRef<'_, f64>) -> Result<Mat<f64>> {
    let n = a.nrows();
    let m = c.nrows();
    let c_inv = spd_inverse(c, MAX_NUISANCE_COND).map_err(Error::SingularFim)?;
    let b_cinv = b * &c_inv;
    let schur = a - &b_cinv * b.transpose();
    let w = spd_inverse(schur.as_ref(), MAX_NUISANCE_COND).map_err(Error::SingularFim)?;
    let top_right = -(&w * &b_cinv);
    let bottom_right = &c_inv + b_cinv.transpose() * &w * &b_cinv;
    Ok(Mat::from_fn(n + m, n + m, |i, j| match (i < n, j < n) {
        (true, true) => w[(i, j)],
        (true, false) => top_right[(i, j - n)],
        (false, true) => top_right[(j, i - n)],
        (false, false) => bottom_right[(i - n, j - n)],
    }))
}

/// `Tr((J_p - J_pr J_r^-1 J_rp)^-1)` for the selected parameter vector.
pub fn crb_schur(fim: &Fim, which: Param) -> Result<f64> {
    let p = which.index();
    let [o1, o2] = which.others();
    let j_p = fim.block(p, p);
    let j_pr = fim.sub(&[p], &[o1, o2]);
    let rho_inv = partitioned_inverse(fim.block(o1, o1).as_ref(), fim.block(o1, o2).as_ref(), fim.block(o2, o2).as_ref())?;
    let schur = &j_p - &j_pr * &rho_inv * j_pr.transpose();
    let inv = spd_inverse(schur.as_ref(), f64::INFINITY).map_err(Error::SingularFim)?;
    Ok((0..inv.nrows()).map(|i| inv[(i, i)]).sum())
}

/// `4 pi T_p / lambda`, the Jacobian of Doppler with respect to velocity.
pub fn velocity_jacobian(cfg: &WaveformConfig) -> f64 {
    4.0 * PI * cfg.subpulse_interval / cfg.wavelength
}

/// Velocity bound: rescale the Doppler rows and columns by the Jacobian and
/// take the Schur trace.
pub fn crb_velocity(fim: &Fim, cfg: &WaveformConfig) -> Result<f64> {
    let t = velocity_jacobian(cfg);
    let w = fim.n_params;
    let scaled = Mat::<f64>::from_fn(3 * w, 3 * w, |r, c| {
        let fr = if r >= 2 * w { t } else { 1.0 };
        let fc = if c >= 2 * w { t } else { 1.0 };
        fim.j[(r, c)] * fr * fc
    });
    crb_schur(&Fim::from_matrix(scaled)?, Param::Omega)
}

/// `L Tr((D^H D / s2 + diag(z))^-1)`.
pub fn bcrb_rcs(d: MatRef<'_, c64>, z: &[f64], n_snapshots: usize, noise_var: f64) -> Result<f64> {
    let g = d.ncols();
    if z.len() != g {
        return Err(Error::Dimension(format!("{} precisions for {g} columns", z.len())));
    }
    let mut prec = d.adjoint() * d;
    for j in 0..g {
        for i in 0..g {
            prec[(i, j)] /= noise_var;
        }
        prec[(j, j)] += c64::new(z[j], 0.0);
    }
    let inv = hpd_inverse(prec.as_ref())?;
    Ok(n_snapshots as f64 * (0..g).map(|i| inv[(i, i)].re).sum::<f64>())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundReport {
    pub crb_theta: f64,
    pub crb_phi: f64,
    pub crb_omega: f64,
    pub crb_velocity: f64,
    pub bcrb_rcs: f64,
}

/// Bounds for one simulated batch: CRBs over the targets, BCRB over all
/// scatterers with their prior precisions.
pub fn bound_report(
    truth: &GroundTruth,
    cfg: &WaveformConfig,
    tx: &CMat,
    noise_var: f64,
    target_var: f64,
    clutter_var: f64,
    mode: RcsMode,
) -> Result<BoundReport> {
    let comps = BoundComponent::targets_of(truth, target_var);
    let fim = fim_blocks(&comps, cfg, tx, noise_var, mode)?;
    let m = cfg.snapshot_len();
    let all = &truth.components;
    let mut d = Mat::<c64>::zeros(m, all.len());
    let mut z = Vec::with_capacity(all.len());
    for (k, c) in all.iter().enumerate() {
        let set = atom_with_derivatives(c.geometry.aod, c.geometry.aoa, c.geometry.doppler, cfg, tx);
        for i in 0..m {
            d[(i, k)] = set.psi[i];
        }
        z.push(match c.geometry.kind {
            ComponentKind::Target => 1.0 / target_var,
            ComponentKind::Clutter => 1.0 / clutter_var,
        });
    }
    let l = all.first().map_or(0, |c| c.rcs.len());
    Ok(BoundReport {
        crb_theta: crb_schur(&fim, Param::Theta)?,
        crb_phi: crb_schur(&fim, Param::Phi)?,
        crb_omega: crb_schur(&fim, Param::Omega)?,
        crb_velocity: crb_velocity(&fim, cfg)?,
        bcrb_rcs: bcrb_rcs(d.as_ref(), &z, l, noise_var)?,
    })
}
