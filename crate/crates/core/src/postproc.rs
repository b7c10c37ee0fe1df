//! Clutter rejection, bistatic localization and truth association.

use std::f64::consts::PI;

use faer::c64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::WaveformConfig;

const SIN_FLOOR: f64 = 1e-9;

/// `|omega| <= delta * omega_max / G` marks a tuple as clutter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClutterRule {
    pub delta: f64,
    pub omega_max: f64,
    pub grid_size: usize,
}

impl ClutterRule {
    pub fn new(delta: f64, omega_max: f64, grid_size: usize) -> Self {
        Self {
            delta,
            omega_max,
            grid_size,
        }
    }

    pub fn threshold(&self) -> f64 {
        self.delta * self.omega_max / self.grid_size as f64
    }

    pub fn is_clutter(&self, omega: f64) -> bool {
        omega.abs() <= self.threshold()
    }
}

/// An estimated scattering component before geometric post-processing.
#[derive(Debug, Clone, PartialEq)]
pub struct TupleEstimate {
    pub aod: f64,
    pub aoa: f64,
    pub doppler: f64,
    pub rcs_row: Vec<c64>,
}

impl TupleEstimate {
    pub fn params(&self) -> (f64, f64, f64) {
        (self.aod, self.aoa, self.doppler)
    }
}

/// Split tuples into `(targets, clutter)`, preserving order.
pub fn filter_clutter(estimates: &[TupleEstimate], rule: &ClutterRule) -> (Vec<TupleEstimate>, Vec<TupleEstimate>) {
    estimates.iter().cloned().partition(|e| !rule.is_clutter(e.doppler))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Localization {
    /// Transmitter-to-target range.
    pub range_tx: f64,
    /// Target-to-receiver range.
    pub range_rx: f64,
    pub sum_distance: f64,
    pub position: (f64, f64),
}

fn check_inputs(aod: f64, aoa: f64) -> Result<()> {
    for (what, v) in [("AoD", aod), ("AoA", aoa)] {
        if !(0.0..PI).contains(&v) {
            return Err(Error::AngleOutOfRange { what, value: v });
        }
    }
    if (aoa - aod).sin().abs() <= SIN_FLOOR {
        return Err(Error::NonLocalizable(format!(
            "AoD {aod} and AoA {aoa} are collinear with the baseline"
        )));
    }
    Ok(())
}

/// Law-of-sines localization from AoD and global-frame AoA.
pub fn localize(aod: f64, aoa: f64, receiver: (f64, f64)) -> Result<Localization> {
    check_inputs(aod, aoa)?;
    let (rr, pr) = receiver;
    let (range_tx, sum_distance) = if pr <= PI / 2.0 {
        let den = (PI - aoa + aod).sin();
        (
            rr * (PI - aoa + pr).sin() / (aoa - aod).sin(),
            rr * ((aod - pr).sin() + (PI - aoa + pr).sin()) / den,
        )
    } else {
        let den = (PI + aoa - aod).sin();
        (
            rr * (aoa + PI - pr).sin() / (aod - aoa).sin(),
            rr * ((pr - aod).sin() + (PI - pr + aoa).sin()) / den,
        )
    };
    let range_rx = sum_distance - range_tx;
    if !(range_tx > 0.0 && range_rx > 0.0) {
        return Err(Error::NonLocalizable(format!(
            "AoD {aod} and AoA {aoa} rays do not intersect in front of both arrays"
        )));
    }
    Ok(Localization {
        range_tx,
        range_rx,
        sum_distance,
        position: (range_tx * aod.cos(), range_tx * aod.sin()),
    })
}

/// Localization by solving the 2x2 triangle-closure system `P r = [R_r, 0]`.
pub fn localize_linear(aod: f64, aoa: f64, receiver: (f64, f64)) -> Result<Localization> {
    check_inputs(aod, aoa)?;
    let (rr, pr) = receiver;
    let (a, b) = ((aod - pr).cos(), (PI - aoa + pr).cos());
    let (c, d) = (-(aod - pr).sin(), (PI - aoa + pr).sin());
    let det = a * d - b * c;
    if det.abs() <= SIN_FLOOR {
        return Err(Error::NonLocalizable("singular triangle system".into()));
    }
    let range_tx = d * rr / det;
    let range_rx = -c * rr / det;
    if !(range_tx > 0.0 && range_rx > 0.0) {
        return Err(Error::NonLocalizable(format!(
            "AoD {aod} and AoA {aoa} rays do not intersect in front of both arrays"
        )));
    }
    Ok(Localization {
        range_tx,
        range_rx,
        sum_distance: range_tx + range_rx,
        position: (range_tx * aod.cos(), range_tx * aod.sin()),
    })
}

/// `omega * lambda / (4 pi T_p)`.
pub fn velocity_from_doppler(omega: f64, cfg: &WaveformConfig) -> f64 {
    omega * cfg.wavelength / (4.0 * PI * cfg.subpulse_interval)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetEstimate {
    pub aod: f64,
    pub aoa: f64,
    pub doppler: f64,
    pub position: (f64, f64),
    pub range_tx: f64,
    pub range_rx: f64,
    pub sum_distance: f64,
    pub velocity: f64,
    pub rcs_row: Vec<c64>,
}

impl TargetEstimate {
    pub fn from_tuple(t: &TupleEstimate, receiver: (f64, f64), cfg: &WaveformConfig) -> Result<Self> {
        let loc = localize(t.aod, t.aoa, receiver)?;
        Ok(Self {
            aod: t.aod,
            aoa: t.aoa,
            doppler: t.doppler,
            position: loc.position,
            range_tx: loc.range_tx,
            range_rx: loc.range_rx,
            sum_distance: loc.sum_distance,
            velocity: velocity_from_doppler(t.doppler, cfg),
            rcs_row: t.rcs_row.clone(),
        })
    }

    /// Root-mean-square RCS magnitude over snapshots.
    pub fn rcs_magnitude(&self) -> f64 {
        let n = self.rcs_row.len().max(1) as f64;
        (self.rcs_row.iter().map(|b| b.norm_sqr()).sum::<f64>() / n).sqrt()
    }
}

#[derive(Debug, Serialize)]
pub struct TargetRecord {
    pub aod_deg: f64,
    pub aoa_deg: f64,
    pub doppler_rad: f64,
    pub x_m: f64,
    pub y_m: f64,
    pub sum_distance_m: f64,
    pub v_mps: f64,
    pub rcs_abs: f64,
}

impl From<&TargetEstimate> for TargetRecord {
    fn from(t: &TargetEstimate) -> Self {
        Self {
            aod_deg: t.aod.to_degrees(),
            aoa_deg: t.aoa.to_degrees(),
            doppler_rad: t.doppler,
            x_m: t.position.0,
            y_m: t.position.1,
            sum_distance_m: t.sum_distance,
            v_mps: t.velocity,
            rcs_abs: t.rcs_magnitude(),
        }
    }
}

/// Outcome of associating estimates with ground truth.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Assignment {
    /// `(estimate index, truth index)`, sorted by truth index.
    pub pairs: Vec<(usize, usize)>,
    pub false_alarms: Vec<usize>,
    pub misses: Vec<usize>,
    pub cost: f64,
}

/// Span-normalized squared distance between two parameter tuples.
pub fn tuple_distance(a: (f64, f64, f64), b: (f64, f64, f64), widths: [f64; 3]) -> f64 {
    ((a.0 - b.0) / widths[0]).powi(2) + ((a.1 - b.1) / widths[1]).powi(2) + ((a.2 - b.2) / widths[2]).powi(2)
}

/// Minimum-cost assignment of estimates to truths. Pairs whose cost exceeds
/// `gate` are split into a false alarm and a miss.
pub fn match_to_truth(
    estimates: &[(f64, f64, f64)],
    truths: &[(f64, f64, f64)],
    widths: [f64; 3],
    gate: Option<f64>,
) -> Assignment {
    let cost: Vec<Vec<f64>> = estimates
        .iter()
        .map(|e| truths.iter().map(|t| tuple_distance(*e, *t, widths)).collect())
        .collect();
    let mut out = Assignment::default();
    let raw = hungarian(&cost, estimates.len(), truths.len());
    let mut est_used = vec![false; estimates.len()];
    let mut truth_used = vec![false; truths.len()];
    for (e, t) in raw {
        let c = cost[e][t];
        if gate.is_some_and(|g| c > g) {
            continue;
        }
        est_used[e] = true;
        truth_used[t] = true;
        out.cost += c;
        out.pairs.push((e, t));
    }
    out.pairs.sort_by_key(|p| p.1);
    out.false_alarms = (0..estimates.len()).filter(|&e| !est_used[e]).collect();
    out.misses = (0..truths.len()).filter(|&t| !truth_used[t]).collect();
    out
}

/// Rectangular Hungarian algorithm with potentials. Returns
/// `min(rows, cols)` pairs `(row, col)`.
fn hungarian(cost: &[Vec<f64>], rows: usize, cols: usize) -> Vec<(usize, usize)> {
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    let transpose = rows > cols;
    let (n, m) = if transpose { (cols, rows) } else { (rows, cols) };
    let at = |i: usize, j: usize| if transpose { cost[j][i] } else { cost[i][j] };
    // 1-based arrays, column 0 is the virtual start
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = at(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = Vec::with_capacity(n);
    for j in 1..=m {
        if p[j] != 0 {
            let (r, c) = (p[j] - 1, j - 1);
            out.push(if transpose { (c, r) } else { (r, c) });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{bearing_from_receiver, sum_distance};
    use proptest::prelude::*;

    const DEG: f64 = PI / 180.0;

    fn tuple(aod: f64, aoa: f64, doppler: f64) -> TupleEstimate {
        TupleEstimate {
            aod,
            aoa,
            doppler,
            rcs_row: vec![c64::new(1.0, 0.0)],
        }
    }

    #[test]
    fn clutter_rule_edges() {
        let rule = ClutterRule::new(1.0, 1.5, 150);
        assert!(rule.is_clutter(0.0));
        let rule = ClutterRule::new(149.0, 1.5, 150);
        assert!(!rule.is_clutter(1.5));
        let rule = ClutterRule::new(5.0, 1.5, 150);
        assert!((rule.threshold() - 0.05).abs() < 1e-15);
    }

    #[test]
    fn filter_partitions_input() {
        let rule = ClutterRule::new(5.0, 1.5, 150);
        let input = vec![tuple(0.5, 2.0, 0.25), tuple(0.6, 2.5, -0.01), tuple(0.7, 2.6, 0.05), tuple(0.8, 2.7, -0.5)];
        let (t, c) = filter_clutter(&input, &rule);
        assert_eq!(t.len() + c.len(), input.len());
        assert_eq!(c.len(), 2);
        for e in &input {
            assert!(t.contains(e) ^ c.contains(e));
        }
    }

    #[test]
    fn table3_target_one() {
        let aoa = 168.74 * DEG;
        let loc = localize(52.64 * DEG, aoa, (95.0, 0.0)).unwrap();
        assert!((loc.range_tx - 20.66).abs() < 0.02, "{}", loc.range_tx);
        assert!((loc.position.0 - 12.53).abs() < 0.02 && (loc.position.1 - 16.43).abs() < 0.02);

        // forward geometry oracle
        let pos = (20.66 * (52.64 * DEG).cos(), 20.66 * (52.64 * DEG).sin());
        let true_aoa = bearing_from_receiver(pos, (95.0, 0.0));
        let loc = localize(52.64 * DEG, true_aoa, (95.0, 0.0)).unwrap();
        assert!((loc.position.0 - pos.0).abs() < 1e-9 && (loc.position.1 - pos.1).abs() < 1e-9);
    }

    #[test]
    fn closed_form_equals_linear_system() {
        for pr in [0.0, 0.3, PI / 2.0, 2.0] {
            let rx = (95.0, pr);
            let pos = (10.0 * pr.cos() + 20.0 * (pr + 0.8).cos(), 10.0 * pr.sin() + 20.0 * (pr + 0.8).sin());
            let aod = pos.1.atan2(pos.0);
            let aoa = bearing_from_receiver(pos, rx);
            if !(0.0..PI).contains(&aod) || !(0.0..PI).contains(&aoa) {
                continue;
            }
            let a = localize(aod, aoa, rx).unwrap();
            let b = localize_linear(aod, aoa, rx).unwrap();
            assert!((a.range_tx - b.range_tx).abs() <= 1e-9 * b.range_tx);
            assert!((a.sum_distance - b.sum_distance).abs() <= 1e-9 * b.sum_distance);
            assert!((a.sum_distance - sum_distance(pos, rx)).abs() < 1e-9);
        }
    }

    #[test]
    fn collinear_is_not_localizable() {
        assert!(matches!(localize(0.7, 0.7, (95.0, 0.0)), Err(Error::NonLocalizable(_))));
        assert!(matches!(localize(-0.1, 2.0, (95.0, 0.0)), Err(Error::AngleOutOfRange { .. })));
    }

    #[test]
    fn velocity_examples() {
        let cfg = WaveformConfig::with_wavelength(6, 6, 16, 40e-6, 0.01);
        assert_eq!(velocity_from_doppler(0.0, &cfg), 0.0);
        assert!((velocity_from_doppler(0.25133, &cfg) - 5.0).abs() < 1e-4);
        assert!(velocity_from_doppler(-0.3, &cfg) < 0.0);
    }

    #[test]
    fn matching_identity_and_permutation() {
        let w = [PI, PI, 3.0];
        let truths = vec![(0.5, 2.0, 0.1), (0.9, 2.4, -0.3), (1.2, 2.9, 0.6)];
        let a = match_to_truth(&truths, &truths, w, None);
        assert_eq!(a.pairs, vec![(0, 0), (1, 1), (2, 2)]);
        assert_eq!(a.cost, 0.0);
        let perm = vec![truths[2], truths[0], truths[1]];
        let a = match_to_truth(&perm, &truths, w, None);
        assert_eq!(a.pairs, vec![(1, 0), (2, 1), (0, 2)]);
    }

    fn brute_force(cost: &[Vec<f64>]) -> f64 {
        // estimates >= truths here
        fn rec(cost: &[Vec<f64>], t: usize, used: &mut Vec<bool>) -> f64 {
            if t == cost[0].len() {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for e in 0..cost.len() {
                if !used[e] {
                    used[e] = true;
                    best = best.min(cost[e][t] + rec(cost, t + 1, used));
                    used[e] = false;
                }
            }
            best
        }
        rec(cost, 0, &mut vec![false; cost.len()])
    }

    proptest! {
        #[test]
        fn hungarian_matches_enumeration(seed in proptest::collection::vec(0.0f64..1.0, 24), n_truth in 1usize..=4, extra in 0usize..=2) {
            let n_est = (n_truth + extra).min(6);
            let w = [1.0, 1.0, 1.0];
            let truths: Vec<_> = (0..n_truth).map(|i| (seed[3 * i], seed[3 * i + 1], seed[3 * i + 2])).collect();
            let ests: Vec<_> = (0..n_est).map(|i| (seed[12 + 2 * i % 12], seed[(13 + 2 * i) % 24], seed[(5 + i) % 24])).collect();
            let a = match_to_truth(&ests, &truths, w, None);
            let cost: Vec<Vec<f64>> = ests.iter().map(|e| truths.iter().map(|t| tuple_distance(*e, *t, w)).collect()).collect();
            prop_assert!((a.cost - brute_force(&cost)).abs() < 1e-12);
            prop_assert_eq!(a.pairs.len(), n_truth);
            prop_assert_eq!(a.false_alarms.len(), n_est - n_truth);
            prop_assert!(a.misses.is_empty());
        }

        #[test]
        fn localization_round_trip(r in 1.0f64..80.0, orient in 0.05f64..3.0, rr in 20.0f64..150.0, pr in 0.0f64..3.0) {
            let pos = (r * orient.cos(), r * orient.sin());
            let rx = (rr, pr);
            let aoa = bearing_from_receiver(pos, rx);
            let (rxx, rxy) = (rr * pr.cos(), rr * pr.sin());
            let valid = (0.0..PI).contains(&aoa) && (aoa - orient).sin().abs() > 1e-3 && (pos.0 - rxx).hypot(pos.1 - rxy) > 1e-3;
            prop_assume!(valid);
            let loc = localize(orient, aoa, rx).unwrap();
            prop_assert!((loc.position.0 - pos.0).abs() < 1e-6 && (loc.position.1 - pos.1).abs() < 1e-6);
            prop_assert!((loc.sum_distance - (loc.range_tx + loc.range_rx)).abs() <= 1e-9 * loc.sum_distance);
        }
    }
}
