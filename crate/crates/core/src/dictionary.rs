//! Non-uniform 3D (AoD, AoA, Doppler) grid and the dictionary built on it.

use std::f64::consts::PI;
use std::path::Path;

use faer::{c64, Mat};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cis, CMat};
use crate::scene::{echo_atom, steering_rx, steering_tx, WaveformConfig};

/// Closed parameter intervals `(lo, hi)` for each grid dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spans {
    pub aod: (f64, f64),
    pub aoa: (f64, f64),
    pub doppler: (f64, f64),
}

impl Spans {
    pub fn new(aod: (f64, f64), aoa: (f64, f64), doppler: (f64, f64)) -> Self {
        Self { aod, aoa, doppler }
    }

    /// `[0, pi) x [0, pi) x [-w, w]`.
    pub fn full(doppler_max: f64) -> Self {
        Self::new((0.0, PI), (0.0, PI), (-doppler_max, doppler_max))
    }

    pub fn widths(&self) -> [f64; 3] {
        [
            self.aod.1 - self.aod.0,
            self.aoa.1 - self.aoa.0,
            self.doppler.1 - self.doppler.0,
        ]
    }

    pub fn bounds(&self) -> [(f64, f64); 3] {
        [self.aod, self.aoa, self.doppler]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [("AoD", self.aod), ("AoA", self.aoa), ("Doppler", self.doppler)] {
            if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::DegenerateSpan(name));
            }
        }
        Ok(())
    }

    pub fn contains(&self, theta: f64, phi: f64, omega: f64) -> bool {
        [theta, phi, omega]
            .iter()
            .zip(self.bounds())
            .all(|(v, (lo, hi))| *v >= lo && *v <= hi)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid3D {
    pub aod: Vec<f64>,
    pub aoa: Vec<f64>,
    pub doppler: Vec<f64>,
    pub spans: Spans,
}

impl Grid3D {
    pub fn from_points(aod: Vec<f64>, aoa: Vec<f64>, doppler: Vec<f64>, spans: Spans) -> Result<Self> {
        spans.validate()?;
        if aod.len() != aoa.len() || aod.len() != doppler.len() {
            return Err(Error::Dimension(format!(
                "grid coordinate lengths {} / {} / {}",
                aod.len(),
                aoa.len(),
                doppler.len()
            )));
        }
        Ok(Self {
            aod,
            aoa,
            doppler,
            spans,
        })
    }

    pub fn len(&self) -> usize {
        self.aod.len()
    }

    pub fn is_empty(&self) -> bool {
        self.aod.is_empty()
    }

    pub fn tuple(&self, g: usize) -> (f64, f64, f64) {
        (self.aod[g], self.aoa[g], self.doppler[g])
    }

    pub fn coord(&self, dim: usize) -> &[f64] {
        match dim {
            0 => &self.aod,
            1 => &self.aoa,
            _ => &self.doppler,
        }
    }

    pub fn coord_mut(&mut self, dim: usize) -> &mut Vec<f64> {
        match dim {
            0 => &mut self.aod,
            1 => &mut self.aoa,
            _ => &mut self.doppler,
        }
    }

    /// Typical spacing between neighbouring tuples in 3D, per dimension:
    /// `span / G^(1/3)`.
    pub fn cell_scale(&self) -> [f64; 3] {
        let n = (self.len().max(1) as f64).cbrt();
        self.spans.widths().map(|w| w / n)
    }

    /// Largest gap between consecutive sorted values of one coordinate,
    /// including the gaps to the span edges.
    pub fn max_gap(&self, dim: usize) -> f64 {
        let (lo, hi) = self.spans.bounds()[dim];
        let mut v = self.coord(dim).to_vec();
        v.sort_by(f64::total_cmp);
        let mut gap = 0.0f64;
        let mut prev = lo;
        for x in v {
            gap = gap.max(x - prev);
            prev = x;
        }
        gap.max(hi - prev)
    }

    /// True when no two tuples share a value in any coordinate.
    pub fn is_distinct(&self) -> bool {
        (0..3).all(|d| {
            let mut v = self.coord(d).to_vec();
            v.sort_by(f64::total_cmp);
            v.windows(2).all(|w| w[0] != w[1])
        })
    }
}

/// Latin-hypercube grid: each coordinate takes `G` equispaced cell centres
/// over its span, independently permuted, then jittered by up to
/// `jitter * spacing`.
pub fn sample_grid<R: Rng + ?Sized>(g: usize, spans: Spans, jitter: f64, rng: &mut R) -> Result<Grid3D> {
    spans.validate()?;
    if g < 2 {
        return Err(Error::config("grid.size", "need at least 2 grid points"));
    }
    if !(0.0..0.5).contains(&jitter) {
        return Err(Error::config("grid.jitter", "jitter must lie in [0, 0.5)"));
    }
    let mut coords: [Vec<f64>; 3] = Default::default();
    for (dim, (lo, hi)) in spans.bounds().into_iter().enumerate() {
        let step = (hi - lo) / g as f64;
        let mut v: Vec<f64> = (0..g)
            .map(|k| {
                let j = if jitter > 0.0 { rng.random_range(-jitter..jitter) } else { 0.0 };
                lo + (k as f64 + 0.5 + j) * step
            })
            .collect();
        v.shuffle(rng);
        coords[dim] = v;
    }
    let [aod, aoa, doppler] = coords;
    Grid3D::from_points(aod, aoa, doppler, spans)
}

/// Dictionary column `psi(theta, phi, omega)`.
pub fn atom(theta: f64, phi: f64, omega: f64, cfg: &WaveformConfig, tx: &CMat) -> Vec<c64> {
    echo_atom(theta, phi, omega, cfg, tx)
}

/// A dictionary column together with its partial derivatives.
#[derive(Debug, Clone)]
pub struct AtomSet {
    pub psi: Vec<c64>,
    pub d_theta: Vec<c64>,
    pub d_phi: Vec<c64>,
    pub d_omega: Vec<c64>,
}

pub fn atom_with_derivatives(theta: f64, phi: f64, omega: f64, cfg: &WaveformConfig, tx: &CMat) -> AtomSet {
    let c = steering_tx(theta, cfg);
    let d = steering_rx(phi, cfg);
    let kt = -2.0 * PI * cfg.tx_spacing / cfg.wavelength * theta.cos();
    let kr = -2.0 * PI * cfg.rx_spacing / cfg.wavelength * phi.cos();
    let dd: Vec<c64> = d.iter().enumerate().map(|(r, v)| v * c64::new(0.0, kr * r as f64)).collect();
    let n_rx = d.len();
    let n_sub = tx.ncols();
    let m = n_rx * n_sub;
    let mut out = AtomSet {
        psi: Vec::with_capacity(m),
        d_theta: Vec::with_capacity(m),
        d_phi: Vec::with_capacity(m),
        d_omega: Vec::with_capacity(m),
    };
    for u in 0..n_sub {
        let mut s = c64::new(0.0, 0.0);
        let mut st = c64::new(0.0, 0.0);
        for (t, ct) in c.iter().enumerate() {
            let v = ct * tx[(t, u)];
            s += v;
            st += v * c64::new(0.0, kt * t as f64);
        }
        let dop = cis(omega * u as f64);
        s *= dop;
        st *= dop;
        let ju = c64::new(0.0, u as f64);
        for r in 0..n_rx {
            let p = d[r] * s;
            out.psi.push(p);
            out.d_theta.push(d[r] * st);
            out.d_phi.push(dd[r] * s);
            out.d_omega.push(p * ju);
        }
    }
    out
}

/// `Psi` and the three derivative matrices on a grid.
#[derive(Debug, Clone)]
pub struct Dictionary {
    pub psi: CMat,
    pub xi_t: CMat,
    pub xi_r: CMat,
    pub xi_w: CMat,
    pub grid: Grid3D,
    pub cfg: WaveformConfig,
    pub tx: CMat,
}

impl Dictionary {
    pub fn build(grid: Grid3D, cfg: &WaveformConfig, tx: &CMat) -> Result<Self> {
        if tx.nrows() != cfg.n_tx || tx.ncols() != cfg.n_subpulses {
            return Err(Error::Dimension(format!(
                "transmit matrix is {}x{}, expected {}x{}",
                tx.nrows(),
                tx.ncols(),
                cfg.n_tx,
                cfg.n_subpulses
            )));
        }
        let m = cfg.snapshot_len();
        let g = grid.len();
        let mut dict = Self {
            psi: Mat::zeros(m, g),
            xi_t: Mat::zeros(m, g),
            xi_r: Mat::zeros(m, g),
            xi_w: Mat::zeros(m, g),
            grid,
            cfg: *cfg,
            tx: tx.clone(),
        };
        let all: Vec<usize> = (0..g).collect();
        dict.refresh_columns(&all);
        Ok(dict)
    }

    pub fn n_rows(&self) -> usize {
        self.psi.nrows()
    }

    pub fn n_atoms(&self) -> usize {
        self.psi.ncols()
    }

    /// Recompute the listed columns from the current grid tuples.
    pub fn refresh_columns(&mut self, cols: &[usize]) {
        let grid = &self.grid;
        let cfg = &self.cfg;
        let tx = &self.tx;
        let sets: Vec<AtomSet> = cols
            .par_iter()
            .map(|&g| {
                let (t, p, w) = grid.tuple(g);
                atom_with_derivatives(t, p, w, cfg, tx)
            })
            .collect();
        for (&g, set) in cols.iter().zip(sets) {
            for i in 0..set.psi.len() {
                self.psi[(i, g)] = set.psi[i];
                self.xi_t[(i, g)] = set.d_theta[i];
                self.xi_r[(i, g)] = set.d_phi[i];
                self.xi_w[(i, g)] = set.d_omega[i];
            }
        }
    }

    /// Derivative matrix for dimension 0 (AoD), 1 (AoA) or 2 (Doppler).
    pub fn xi(&self, dim: usize) -> &CMat {
        match dim {
            0 => &self.xi_t,
            1 => &self.xi_r,
            _ => &self.xi_w,
        }
    }
}

/// `D = Psi + Xi_t diag(eps_t) + Xi_r diag(eps_r) + Xi_w diag(eps_w)`.
pub fn offgrid_sensing(dict: &Dictionary, eps_t: &[f64], eps_r: &[f64], eps_w: &[f64]) -> Result<CMat> {
    let g = dict.n_atoms();
    if eps_t.len() != g || eps_r.len() != g || eps_w.len() != g {
        return Err(Error::Dimension(format!("offset vectors must have length {g}")));
    }
    let mut d = dict.psi.clone();
    for j in 0..g {
        let (a, b, c) = (eps_t[j], eps_r[j], eps_w[j]);
        if a == 0.0 && b == 0.0 && c == 0.0 {
            continue;
        }
        for i in 0..d.nrows() {
            d[(i, j)] += dict.xi_t[(i, j)] * a + dict.xi_r[(i, j)] * b + dict.xi_w[(i, j)] * c;
        }
    }
    Ok(d)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NearestGrid {
    pub index: usize,
    /// Signed offsets `query - grid` in each dimension.
    pub offsets: (f64, f64, f64),
}

/// Closest grid tuple under the span-normalized Euclidean distance.
pub fn nearest_grid_index(grid: &Grid3D, theta: f64, phi: f64, omega: f64) -> Result<NearestGrid> {
    if !grid.spans.contains(theta, phi, omega) {
        return Err(Error::OutOfSpan(format!("({theta}, {phi}, {omega})")));
    }
    if grid.is_empty() {
        return Err(Error::Dimension("empty grid".into()));
    }
    let [wt, wp, ww] = grid.spans.widths();
    let mut best = (f64::INFINITY, 0usize);
    for g in 0..grid.len() {
        let (a, b, c) = grid.tuple(g);
        let dist = ((theta - a) / wt).powi(2) + ((phi - b) / wp).powi(2) + ((omega - c) / ww).powi(2);
        if dist < best.0 {
            best = (dist, g);
        }
    }
    let (a, b, c) = grid.tuple(best.1);
    Ok(NearestGrid {
        index: best.1,
        offsets: (theta - a, phi - b, omega - c),
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct GridRow {
    aod_rad: f64,
    aoa_rad: f64,
    doppler_rad: f64,
}

pub fn write_grid_csv(path: &Path, grid: &Grid3D) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for g in 0..grid.len() {
        let (aod_rad, aoa_rad, doppler_rad) = grid.tuple(g);
        w.serialize(GridRow {
            aod_rad,
            aoa_rad,
            doppler_rad,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_grid_csv(path: &Path, spans: Spans) -> Result<Grid3D> {
    let mut r = csv::Reader::from_path(path)?;
    let (mut aod, mut aoa, mut doppler) = (Vec::new(), Vec::new(), Vec::new());
    for (line, row) in r.deserialize::<GridRow>().enumerate() {
        let row = row?;
        if !spans.contains(row.aod_rad, row.aoa_rad, row.doppler_rad) {
            return Err(Error::GridFormat(format!("row {} lies outside the grid spans", line + 1)));
        }
        aod.push(row.aod_rad);
        aoa.push(row.aoa_rad);
        doppler.push(row.doppler_rad);
    }
    if aod.len() < 2 {
        return Err(Error::GridFormat("a grid needs at least 2 rows".into()));
    }
    Grid3D::from_points(aod, aoa, doppler, spans)
}
