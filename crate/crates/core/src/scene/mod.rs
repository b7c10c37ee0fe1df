//! Bistatic radar geometry and the target-plus-clutter echo simulator.
//!
//! The transmitter sits at the origin, the receiver at polar `(R_r, phi_r)`.
//! A target at polar `(R, orientation)` has AoD equal to its orientation and
//! AoA equal to the global-frame bearing from the receiver to the target.
//! Received snapshots are `N_r x U` matrices vectorized column-major, so the
//! entry for receive element `r` and sub-pulse `u` sits at `u * N_r + r`.

pub mod io;

use std::f64::consts::PI;

use faer::{c64, Mat};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cis, complex_normal, CMat};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveformConfig {
    pub n_tx: usize,
    pub n_rx: usize,
    pub n_subpulses: usize,
    /// Sub-pulse interval `T_p` in seconds.
    pub subpulse_interval: f64,
    pub carrier_freq: f64,
    pub wavelength: f64,
    pub tx_spacing: f64,
    pub rx_spacing: f64,
    /// QPSK energy per bit `E_b` (linear).
    pub energy_per_bit: f64,
}

impl WaveformConfig {
    /// Half-wavelength ULAs at both ends, wavelength derived from the carrier.
    pub fn new(n_tx: usize, n_rx: usize, n_subpulses: usize, subpulse_interval: f64, carrier_freq: f64) -> Self {
        let wavelength = SPEED_OF_LIGHT / carrier_freq;
        Self {
            n_tx,
            n_rx,
            n_subpulses,
            subpulse_interval,
            carrier_freq,
            wavelength,
            tx_spacing: wavelength / 2.0,
            rx_spacing: wavelength / 2.0,
            energy_per_bit: 1.0,
        }
    }

    /// Same as [`WaveformConfig::new`] but with an explicit wavelength.
    pub fn with_wavelength(n_tx: usize, n_rx: usize, n_subpulses: usize, subpulse_interval: f64, wavelength: f64) -> Self {
        Self {
            n_tx,
            n_rx,
            n_subpulses,
            subpulse_interval,
            carrier_freq: SPEED_OF_LIGHT / wavelength,
            wavelength,
            tx_spacing: wavelength / 2.0,
            rx_spacing: wavelength / 2.0,
            energy_per_bit: 1.0,
        }
    }

    /// Reference waveform: 6x6 arrays, 16 sub-pulses of 40 us at 30 GHz.
    pub fn table3() -> Self {
        Self::new(6, 6, 16, 40e-6, 30e9)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_tx == 0 || self.n_rx == 0 || self.n_subpulses == 0 {
            return Err(Error::InvalidWaveform("antenna and sub-pulse counts must be >= 1".into()));
        }
        if !(self.subpulse_interval > 0.0) {
            return Err(Error::InvalidWaveform("sub-pulse interval must be positive".into()));
        }
        if !(self.wavelength > 0.0) {
            return Err(Error::InvalidWaveform("wavelength must be positive".into()));
        }
        if !(self.energy_per_bit > 0.0) {
            return Err(Error::InvalidWaveform("energy per bit must be positive".into()));
        }
        Ok(())
    }

    /// Length of one vectorized snapshot, `N_r * U`.
    pub fn snapshot_len(&self) -> usize {
        self.n_rx * self.n_subpulses
    }
}

/// Transmit array response `c(theta)`.
pub fn steering_tx(theta: f64, cfg: &WaveformConfig) -> Vec<c64> {
    ula_response(theta, cfg.n_tx, cfg.tx_spacing / cfg.wavelength)
}

/// Receive array response `d(phi)`.
pub fn steering_rx(phi: f64, cfg: &WaveformConfig) -> Vec<c64> {
    ula_response(phi, cfg.n_rx, cfg.rx_spacing / cfg.wavelength)
}

fn ula_response(angle: f64, n: usize, spacing_wl: f64) -> Vec<c64> {
    let k = -2.0 * PI * spacing_wl * angle.sin();
    (0..n).map(|i| cis(k * i as f64)).collect()
}

/// Per-sub-pulse Doppler progression `[1, e^{jw}, ..., e^{jw(U-1)}]`.
pub fn doppler_vector(omega: f64, n_subpulses: usize) -> Vec<c64> {
    (0..n_subpulses).map(|u| cis(omega * u as f64)).collect()
}

/// Round-trip Doppler phase per sub-pulse, `4 pi v T_p / lambda`.
pub fn doppler_from_velocity(velocity: f64, cfg: &WaveformConfig) -> f64 {
    4.0 * PI * velocity * cfg.subpulse_interval / cfg.wavelength
}

/// QPSK transmit matrix `X` (`N_t x U`), entries `(+-1 +- j) sqrt(E_b)`.
pub fn gen_transmit_matrix<R: Rng + ?Sized>(cfg: &WaveformConfig, rng: &mut R) -> CMat {
    let a = cfg.energy_per_bit.sqrt();
    let mut x = Mat::zeros(cfg.n_tx, cfg.n_subpulses);
    for u in 0..cfg.n_subpulses {
        for t in 0..cfg.n_tx {
            let re = if rng.random::<bool>() { a } else { -a };
            let im = if rng.random::<bool>() { a } else { -a };
            x[(t, u)] = c64::new(re, im);
        }
    }
    x
}

/// A moving point target in transmitter-centred polar coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Target {
    pub range: f64,
    /// Polar angle seen from the transmitter; equals the AoD.
    pub orientation: f64,
    pub velocity: f64,
    /// Fixed RCS; `None` draws `CN(0, target_var)` independently per snapshot.
    pub rcs: Option<c64>,
}

impl Target {
    pub fn new(range: f64, orientation: f64, velocity: f64) -> Self {
        Self {
            range,
            orientation,
            velocity,
            rcs: None,
        }
    }

    pub fn position(&self) -> (f64, f64) {
        (self.range * self.orientation.cos(), self.range * self.orientation.sin())
    }
}

/// A static clutter scatterer. Its Doppler is identically zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClutterPatch {
    pub aod: f64,
    pub aoa: f64,
    pub rcs: Option<c64>,
}

impl ClutterPatch {
    /// Place a patch at transmitter-centred polar `(range, orientation)`.
    pub fn at_polar(range: f64, orientation: f64, receiver: (f64, f64)) -> Self {
        let pos = (range * orientation.cos(), range * orientation.sin());
        Self {
            aod: orientation,
            aoa: bearing_from_receiver(pos, receiver),
            rcs: None,
        }
    }
}

fn receiver_xy(receiver: (f64, f64)) -> (f64, f64) {
    (receiver.0 * receiver.1.cos(), receiver.0 * receiver.1.sin())
}

/// Global-frame bearing from the receiver to `pos`, in `(-pi, pi]`.
pub fn bearing_from_receiver(pos: (f64, f64), receiver: (f64, f64)) -> f64 {
    let (rx, ry) = receiver_xy(receiver);
    (pos.1 - ry).atan2(pos.0 - rx)
}

/// Transmitter -> point -> receiver path length.
pub fn sum_distance(pos: (f64, f64), receiver: (f64, f64)) -> f64 {
    let (rx, ry) = receiver_xy(receiver);
    pos.0.hypot(pos.1) + (pos.0 - rx).hypot(pos.1 - ry)
}

fn check_angle(what: &'static str, value: f64) -> Result<()> {
    if (0.0..PI).contains(&value) {
        Ok(())
    } else {
        Err(Error::AngleOutOfRange { what, value })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadarScene {
    pub waveform: WaveformConfig,
    /// Receiver polar coordinates `(R_r, phi_r)`.
    pub receiver_polar: (f64, f64),
    pub targets: Vec<Target>,
    pub clutter: Vec<ClutterPatch>,
    pub noise_var: f64,
    pub target_var: f64,
    pub clutter_var: f64,
    pub rng_seed: u64,
}

fn db_to_lin(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

impl RadarScene {
    /// Reference scene: three moving targets, receiver at (95 m, 0 deg), target and
    /// clutter variances of 10 dB and 12 dB and unit noise. The two clutter
    /// patches are static ground returns placed away from the targets.
    pub fn table3() -> Self {
        let receiver = (95.0, 0.0);
        let deg = PI / 180.0;
        Self {
            waveform: WaveformConfig::table3(),
            receiver_polar: receiver,
            targets: vec![
                Target::new(20.66, 52.64 * deg, 5.0),
                Target::new(25.11, 54.73 * deg, 2.0),
                Target::new(51.13, 12.08 * deg, -10.0),
            ],
            clutter: vec![
                ClutterPatch::at_polar(40.0, 30.0 * deg, receiver),
                ClutterPatch::at_polar(60.0, 75.0 * deg, receiver),
            ],
            noise_var: 1.0,
            target_var: db_to_lin(10.0),
            clutter_var: db_to_lin(12.0),
            rng_seed: 0,
        }
    }

    /// `E_b * sigma_w^2 / (sigma_c^2 + sigma^2)`.
    pub fn scnr(&self) -> f64 {
        self.waveform.energy_per_bit * self.target_var / (self.clutter_var + self.noise_var)
    }

    pub fn scnr_db(&self) -> f64 {
        10.0 * self.scnr().log10()
    }

    /// Set the energy per bit so that the SCNR equals `db`.
    pub fn set_scnr_db(&mut self, db: f64) {
        self.waveform.energy_per_bit = db_to_lin(db) * (self.clutter_var + self.noise_var) / self.target_var;
    }

    /// Target-to-clutter variance ratio in dB.
    pub fn tcr_db(&self) -> f64 {
        10.0 * (self.target_var / self.clutter_var).log10()
    }

    /// Adjust the clutter variance so that the TCR equals `db`.
    pub fn set_tcr_db(&mut self, db: f64) {
        self.clutter_var = self.target_var / db_to_lin(db);
    }

    pub fn target_aod(&self, t: &Target) -> f64 {
        t.orientation
    }

    pub fn target_aoa(&self, t: &Target) -> f64 {
        bearing_from_receiver(t.position(), self.receiver_polar)
    }

    pub fn target_doppler(&self, t: &Target) -> f64 {
        doppler_from_velocity(t.velocity, &self.waveform)
    }

    /// Total number of scattering components `W' = W + N_cl`.
    pub fn n_components(&self) -> usize {
        self.targets.len() + self.clutter.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.waveform.validate()?;
        if !(self.noise_var >= 0.0 && self.target_var >= 0.0 && self.clutter_var >= 0.0) {
            return Err(Error::InvalidWaveform("variances must be non-negative".into()));
        }
        for t in &self.targets {
            if !(t.range > 0.0) {
                return Err(Error::InvalidWaveform(format!("target range {} must be positive", t.range)));
            }
            check_angle("target AoD", self.target_aod(t))?;
            check_angle("target AoA", self.target_aoa(t))?;
        }
        for c in &self.clutter {
            check_angle("clutter AoD", c.aod)?;
            check_angle("clutter AoA", c.aoa)?;
        }
        Ok(())
    }

    /// Ground-truth parameters for every component, targets first.
    pub fn components(&self) -> Result<Vec<ComponentGeometry>> {
        let mut out = Vec::with_capacity(self.n_components());
        for t in &self.targets {
            let pos = t.position();
            out.push(ComponentGeometry {
                kind: ComponentKind::Target,
                aod: self.target_aod(t),
                aoa: self.target_aoa(t),
                doppler: self.target_doppler(t),
                velocity: t.velocity,
                position: pos,
                sum_distance: sum_distance(pos, self.receiver_polar),
            });
        }
        for c in &self.clutter {
            let geo = crate::postproc::localize(c.aod, c.aoa, self.receiver_polar)?;
            out.push(ComponentGeometry {
                kind: ComponentKind::Clutter,
                aod: c.aod,
                aoa: c.aoa,
                doppler: 0.0,
                velocity: 0.0,
                position: geo.position,
                sum_distance: geo.sum_distance,
            });
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComponentKind {
    Target,
    Clutter,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComponentGeometry {
    pub kind: ComponentKind,
    pub aod: f64,
    pub aoa: f64,
    pub doppler: f64,
    pub velocity: f64,
    pub position: (f64, f64),
    pub sum_distance: f64,
}

/// One scatterer as realized in a simulated batch.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthComponent {
    pub geometry: ComponentGeometry,
    /// Drawn RCS per snapshot.
    pub rcs: Vec<c64>,
    /// RCS with the delay phase `e^{-j 2 pi R^B / lambda}` folded in; this is
    /// the coefficient an estimator can recover.
    pub effective_rcs: Vec<c64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub components: Vec<TruthComponent>,
}

impl GroundTruth {
    pub fn targets(&self) -> impl Iterator<Item = &TruthComponent> {
        self.components.iter().filter(|c| c.geometry.kind == ComponentKind::Target)
    }

    pub fn clutter(&self) -> impl Iterator<Item = &TruthComponent> {
        self.components.iter().filter(|c| c.geometry.kind == ComponentKind::Clutter)
    }

    /// `W' x L` matrix of effective coefficients, one row per component.
    pub fn effective_rows(&self) -> CMat {
        let l = self.components.first().map_or(0, |c| c.effective_rcs.len());
        Mat::from_fn(self.components.len(), l, |i, j| self.components[i].effective_rcs[j])
    }
}

/// `Y = [y_1 ... y_L]` together with the transmit matrix that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotBatch {
    /// `N_r U x L`.
    pub y: CMat,
    /// `N_t x U`.
    pub tx: CMat,
    pub n_rx: usize,
}

impl SnapshotBatch {
    pub fn n_snapshots(&self) -> usize {
        self.y.ncols()
    }

    pub fn n_subpulses(&self) -> usize {
        self.tx.ncols()
    }

    pub fn n_tx(&self) -> usize {
        self.tx.nrows()
    }
}

/// Noise-free echo `vec(d(phi) c(theta)^T X diag(doppler(omega)))`.
pub fn echo_atom(theta: f64, phi: f64, omega: f64, cfg: &WaveformConfig, tx: &CMat) -> Vec<c64> {
    let c = steering_tx(theta, cfg);
    let d = steering_rx(phi, cfg);
    let n_sub = tx.ncols();
    let mut out = Vec::with_capacity(d.len() * n_sub);
    for u in 0..n_sub {
        let mut s = c64::new(0.0, 0.0);
        for (t, ct) in c.iter().enumerate() {
            s += ct * tx[(t, u)];
        }
        s *= cis(omega * u as f64);
        out.extend(d.iter().map(|dr| dr * s));
    }
    out
}

/// Draw a fresh transmit matrix, then simulate `n_snapshots` snapshots.
pub fn simulate_snapshots<R: Rng + ?Sized>(
    scene: &RadarScene,
    n_snapshots: usize,
    rng: &mut R,
) -> Result<(SnapshotBatch, GroundTruth)> {
    scene.validate()?;
    let tx = gen_transmit_matrix(&scene.waveform, rng);
    simulate_with_tx(scene, tx, n_snapshots, rng)
}

/// Simulate with a given transmit matrix. RCS draws happen component by
/// component (targets, then clutter), followed by the noise; the number of
/// draws never depends on target kinematics.
pub fn simulate_with_tx<R: Rng + ?Sized>(
    scene: &RadarScene,
    tx: CMat,
    n_snapshots: usize,
    rng: &mut R,
) -> Result<(SnapshotBatch, GroundTruth)> {
    scene.validate()?;
    if n_snapshots == 0 {
        return Err(Error::InvalidWaveform("at least one snapshot is required".into()));
    }
    let cfg = &scene.waveform;
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
    let geometry = scene.components()?;
    let fixed: Vec<Option<c64>> = scene
        .targets
        .iter()
        .map(|t| t.rcs)
        .chain(scene.clutter.iter().map(|c| c.rcs))
        .collect();

    let mut y = Mat::<c64>::zeros(m, n_snapshots);
    let mut components = Vec::with_capacity(geometry.len());
    for (geo, fixed_rcs) in geometry.iter().zip(fixed) {
        let var = match geo.kind {
            ComponentKind::Target => scene.target_var,
            ComponentKind::Clutter => scene.clutter_var,
        };
        let rcs: Vec<c64> = (0..n_snapshots)
            .map(|_| fixed_rcs.unwrap_or_else(|| complex_normal(rng, var)))
            .collect();
        let delay = cis(-2.0 * PI * geo.sum_distance / cfg.wavelength);
        let effective: Vec<c64> = rcs.iter().map(|b| b * delay).collect();
        let atom = echo_atom(geo.aod, geo.aoa, geo.doppler, cfg, &tx);
        for (l, b) in effective.iter().enumerate() {
            for (i, a) in atom.iter().enumerate() {
                y[(i, l)] += a * b;
            }
        }
        components.push(TruthComponent {
            geometry: *geo,
            rcs,
            effective_rcs: effective,
        });
    }
    if scene.noise_var > 0.0 {
        for l in 0..n_snapshots {
            for i in 0..m {
                y[(i, l)] += complex_normal(rng, scene.noise_var);
            }
        }
    }
    Ok((
        SnapshotBatch {
            y,
            tx,
            n_rx: cfg.n_rx,
        },
        GroundTruth { components },
    ))
}

/// Column-major `vec` of an `N_r x U` matrix.
pub fn vec_matrix(a: &CMat) -> Vec<c64> {
    let mut out = Vec::with_capacity(a.nrows() * a.ncols());
    for j in 0..a.ncols() {
        out.extend((0..a.nrows()).map(|i| a[(i, j)]));
    }
    out
}

/// Inverse of [`vec_matrix`].
pub fn unvec(v: &[c64], nrows: usize) -> CMat {
    let ncols = v.len() / nrows;
    Mat::from_fn(nrows, ncols, |i, j| v[j * nrows + i])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(n: usize) -> WaveformConfig {
        WaveformConfig::with_wavelength(n, n, 16, 40e-6, 0.01)
    }

    fn close(a: c64, b: c64, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn steering_at_broadside_is_all_ones() {
        assert!(steering_tx(0.0, &cfg(6)).iter().all(|v| close(*v, c64::new(1.0, 0.0), 0.0)));
        assert!(steering_rx(0.0, &cfg(6)).iter().all(|v| close(*v, c64::new(1.0, 0.0), 0.0)));
    }

    #[test]
    fn steering_at_endfire_alternates() {
        let c = steering_tx(PI / 2.0, &cfg(2));
        assert!(close(c[0], c64::new(1.0, 0.0), 1e-15));
        assert!(close(c[1], c64::new(-1.0, 0.0), 1e-15));
        let d = steering_rx(PI / 2.0, &cfg(2));
        assert!(close(d[1], c64::new(-1.0, 0.0), 1e-15));
    }

    #[test]
    fn steering_matches_scalar_loop() {
        let c = cfg(6);
        for (angle, v) in [(52.64f64, steering_tx(52.64f64.to_radians(), &c)), (168.74, steering_rx(168.74f64.to_radians(), &c))] {
            for (t, got) in v.iter().enumerate() {
                let phase = -2.0 * PI * 0.5 * t as f64 * angle.to_radians().sin();
                let want = c64::new(phase.cos(), phase.sin());
                assert!(close(*got, want, 1e-14), "{angle} {t}");
            }
        }
    }

    #[test]
    fn doppler_vector_values() {
        assert!(doppler_vector(0.0, 5).iter().all(|v| *v == c64::new(1.0, 0.0)));
        let v = doppler_vector(PI, 4);
        for (u, want) in [1.0, -1.0, 1.0, -1.0].iter().enumerate() {
            assert!(close(v[u], c64::new(*want, 0.0), 1e-14));
        }
        let v = doppler_vector(0.2513, 16);
        for (u, got) in v.iter().enumerate() {
            let p = 0.2513 * u as f64;
            assert!(close(*got, c64::new(p.cos(), p.sin()), 1e-14));
        }
    }

    #[test]
    fn doppler_velocity_conversion() {
        let c = cfg(6);
        assert_eq!(doppler_from_velocity(0.0, &c), 0.0);
        let w = doppler_from_velocity(5.0, &c);
        assert!((w - 0.251_327_412_287_183_5).abs() < 1e-12, "{w}");
        let v = crate::postproc::velocity_from_doppler(w, &c);
        assert!((v - 5.0).abs() < 1e-12);
    }

    #[test]
    fn qpsk_entries_and_determinism() {
        let mut c = cfg(6);
        let x = gen_transmit_matrix(&c, &mut ChaCha8Rng::seed_from_u64(1));
        for u in 0..16 {
            for t in 0..6 {
                assert!((x[(t, u)].norm() - 2f64.sqrt()).abs() < 1e-15);
            }
        }
        let x2 = gen_transmit_matrix(&c, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(x, x2);
        c.energy_per_bit = 4.0;
        let x3 = gen_transmit_matrix(&c, &mut ChaCha8Rng::seed_from_u64(1));
        assert!((x3[(0, 0)].norm() - 8f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn qpsk_mean_is_zero() {
        // 1e5 symbols: each component has unit variance, so the 3-sigma CLT
        // bound on the mean is 3 / sqrt(1e5).
        let c = WaveformConfig::with_wavelength(100, 1, 1000, 40e-6, 0.01);
        let x = gen_transmit_matrix(&c, &mut ChaCha8Rng::seed_from_u64(99));
        let n = (100 * 1000) as f64;
        let mut sum = c64::new(0.0, 0.0);
        for u in 0..1000 {
            for t in 0..100 {
                sum += x[(t, u)];
            }
        }
        let bound = 3.0 / n.sqrt();
        assert!((sum.re / n).abs() < bound && (sum.im / n).abs() < bound);
    }

    fn empty_scene() -> RadarScene {
        RadarScene {
            waveform: cfg(6),
            receiver_polar: (95.0, 0.0),
            targets: vec![],
            clutter: vec![],
            noise_var: 1.0,
            target_var: 10.0,
            clutter_var: 10.0,
            rng_seed: 0,
        }
    }

    #[test]
    fn noise_only_scene_has_unit_variance() {
        let scene = empty_scene();
        let (batch, truth) = simulate_snapshots(&scene, 105, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert!(truth.components.is_empty());
        let n = (batch.y.nrows() * batch.y.ncols()) as f64;
        assert!(n >= 1e4);
        let var = batch.y.squared_norm_l2() / n;
        assert!((var - 1.0).abs() < 0.05, "{var}");
    }

    #[test]
    fn single_target_matches_triple_loop() {
        let mut scene = empty_scene();
        scene.noise_var = 0.0;
        let mut t = Target::new(20.66, 52.64f64.to_radians(), 5.0);
        t.rcs = Some(c64::new(1.0, 0.0));
        scene.targets.push(t);
        let (batch, _) = simulate_snapshots(&scene, 1, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let c = &scene.waveform;
        let theta = t.orientation;
        let phi = scene.target_aoa(&t);
        let omega = doppler_from_velocity(5.0, c);
        let rb = sum_distance(t.position(), scene.receiver_polar);
        let delay = -2.0 * PI * rb / c.wavelength;
        for u in 0..16 {
            for r in 0..6 {
                let mut acc = c64::new(0.0, 0.0);
                for tt in 0..6 {
                    let p = -PI * (tt as f64 * theta.sin() + r as f64 * phi.sin()) + omega * u as f64 + delay;
                    acc += c64::new(p.cos(), p.sin()) * batch.tx[(tt, u)];
                }
                assert!(close(batch.y[(u * 6 + r, 0)], acc, 1e-10));
            }
        }
    }

    #[test]
    fn table3_shapes_and_geometry() {
        let scene = RadarScene::table3();
        let (batch, truth) = simulate_snapshots(&scene, 6, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(batch.y.nrows(), 96);
        assert_eq!(batch.y.ncols(), 6);
        assert_eq!(truth.components.len(), 5);
        let aoa = truth.components[0].geometry.aoa.to_degrees();
        assert!((aoa - 168.74).abs() < 0.02, "{aoa}");
    }

    #[test]
    fn out_of_range_angles_are_rejected() {
        let mut scene = empty_scene();
        scene.clutter.push(ClutterPatch {
            aod: 3.5,
            aoa: 1.0,
            rcs: None,
        });
        assert!(matches!(
            simulate_snapshots(&scene, 1, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(Error::AngleOutOfRange { .. })
        ));
        let mut scene = empty_scene();
        // below the baseline: bearing from the receiver is negative
        scene.targets.push(Target::new(10.0, 0.0, 0.0));
        scene.targets[0].orientation = 0.0;
        scene.receiver_polar = (95.0, 0.1);
        assert!(simulate_snapshots(&scene, 1, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn superposition_of_disjoint_target_sets() {
        let mut base = empty_scene();
        base.noise_var = 0.0;
        let mut a = Target::new(20.0, 0.9, 3.0);
        a.rcs = Some(c64::new(0.7, -0.2));
        let mut b = Target::new(40.0, 0.3, -6.0);
        b.rcs = Some(c64::new(-1.1, 0.4));
        let run = |targets: Vec<Target>| {
            let mut s = base.clone();
            s.targets = targets;
            simulate_snapshots(&s, 3, &mut ChaCha8Rng::seed_from_u64(17)).unwrap().0.y
        };
        let both = run(vec![a, b]);
        let only_a = run(vec![a]);
        let only_b = run(vec![b]);
        for j in 0..3 {
            for i in 0..96 {
                assert!(close(both[(i, j)], only_a[(i, j)] + only_b[(i, j)], 1e-12));
            }
        }
    }

    #[test]
    fn clutter_echo_is_invariant_to_target_velocity() {
        let mut scene = RadarScene::table3();
        scene.noise_var = 0.0;
        let (_, t1) = simulate_snapshots(&scene, 4, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        for t in &mut scene.targets {
            t.velocity *= -1.7;
        }
        let (_, t2) = simulate_snapshots(&scene, 4, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let c1: Vec<_> = t1.clutter().cloned().collect();
        let c2: Vec<_> = t2.clutter().cloned().collect();
        assert_eq!(c1, c2);
    }

    #[test]
    fn scnr_is_pure_function_of_fields() {
        let mut scene = RadarScene::table3();
        scene.set_scnr_db(-3.0);
        assert!((scene.scnr_db() + 3.0).abs() < 1e-12);
        scene.set_tcr_db(5.0);
        assert!((scene.tcr_db() - 5.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn steering_entries_have_unit_modulus(angle in 0.0f64..PI, n in 1usize..12) {
            let c = cfg(n);
            for v in steering_tx(angle, &c).iter().chain(steering_rx(angle, &c).iter()) {
                prop_assert!((v.norm() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn vec_unvec_round_trip(nr in 1usize..8, nc in 1usize..8, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = Mat::from_fn(nr, nc, |_, _| complex_normal(&mut rng, 1.0));
            prop_assert_eq!(unvec(&vec_matrix(&a), nr), a);
        }
    }
}
