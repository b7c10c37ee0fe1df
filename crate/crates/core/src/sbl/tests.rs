use std::f64::consts::PI;

use faer::{c64, Mat};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::dictionary::{sample_grid, Dictionary, Grid3D, Spans};
use crate::linalg::complex_normal;
use crate::scene::{gen_transmit_matrix, SnapshotBatch, WaveformConfig};

fn sector() -> Spans {
    Spans::new((0.0, PI / 2.0), (PI / 2.0, PI), (-1.5, 1.5))
}

fn random_cmat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> CMat {
    Mat::from_fn(r, c, |_, _| complex_normal(rng, 1.0))
}

/// Gauss-Jordan inverse with partial pivoting, independent of the library
/// factorizations.
fn gj_inverse(a: &CMat) -> CMat {
    let n = a.nrows();
    let mut m = a.clone();
    let mut inv = Mat::<c64>::identity(n, n);
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[(i, col)].norm().total_cmp(&m[(j, col)].norm())).unwrap();
        for j in 0..n {
            let (t, u) = (m[(col, j)], inv[(col, j)]);
            m[(col, j)] = m[(piv, j)];
            inv[(col, j)] = inv[(piv, j)];
            m[(piv, j)] = t;
            inv[(piv, j)] = u;
        }
        let d = m[(col, col)];
        for j in 0..n {
            m[(col, j)] /= d;
            inv[(col, j)] /= d;
        }
        for i in 0..n {
            if i == col {
                continue;
            }
            let f = m[(i, col)];
            for j in 0..n {
                let (mv, iv) = (m[(col, j)], inv[(col, j)]);
                m[(i, j)] -= f * mv;
                inv[(i, j)] -= f * iv;
            }
        }
    }
    inv
}

/// Data-space form of the Gaussian posterior:
/// `Sigma = Z^-1 - Z^-1 D^H C^-1 D Z^-1`, `U = Z^-1 D^H C^-1 Y` with
/// `C = s2 I + D Z^-1 D^H`.
fn oracle_posterior(d: &CMat, y: &CMat, z: &[f64], s2: f64) -> (CMat, CMat) {
    let (m, g) = (d.nrows(), d.ncols());
    let zinv = Mat::<c64>::from_fn(g, g, |i, j| if i == j { c64::new(1.0 / z[i], 0.0) } else { c64::new(0.0, 0.0) });
    let mut c = d * &zinv * d.adjoint();
    for i in 0..m {
        c[(i, i)] += c64::new(s2, 0.0);
    }
    let cinv = gj_inverse(&c);
    let k = &zinv * d.adjoint() * &cinv;
    let sigma = &zinv - &k * d * &zinv;
    let mu = &k * y;
    (sigma, mu)
}

fn max_abs_diff(a: &CMat, b: &CMat) -> f64 {
    let mut m = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            m = m.max((a[(i, j)] - b[(i, j)]).norm());
        }
    }
    m
}

/// Batch `Y = Psi[:, rows] B + noise` on a given dictionary.
fn synth(dict: &Dictionary, rows: &[usize], l: usize, noise_var: f64, rng: &mut ChaCha8Rng) -> SnapshotBatch {
    let m = dict.n_rows();
    let mut y = Mat::<c64>::zeros(m, l);
    for &g in rows {
        for c in 0..l {
            let b = complex_normal(rng, 1.0) + c64::new(1.0, 0.0);
            for i in 0..m {
                y[(i, c)] += dict.psi[(i, g)] * b;
            }
        }
    }
    for c in 0..l {
        for i in 0..m {
            y[(i, c)] += complex_normal(rng, noise_var);
        }
    }
    SnapshotBatch {
        y,
        tx: dict.tx.clone(),
        n_rx: dict.cfg.n_rx,
    }
}

fn random_dict(g: usize, seed: u64) -> Dictionary {
    let cfg = WaveformConfig::table3();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tx = gen_transmit_matrix(&cfg, &mut rng);
    let grid = sample_grid(g, sector(), 0.1, &mut rng).unwrap();
    Dictionary::build(grid, &cfg, &tx).unwrap()
}

/// Grid whose row 0 sits at `truth - offsets`, padded with `extra` random
/// tuples, together with a noisy single-target batch at `truth`.
fn offgrid_single(truth: (f64, f64, f64), offsets: (f64, f64, f64), extra: usize, amp: f64, seed: u64) -> (Dictionary, SnapshotBatch) {
    let cfg = WaveformConfig::table3();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tx = gen_transmit_matrix(&cfg, &mut rng);
    let base = sample_grid(extra.max(2), sector(), 0.1, &mut rng).unwrap();
    let mut aod = vec![truth.0 - offsets.0];
    let mut aoa = vec![truth.1 - offsets.1];
    let mut dop = vec![truth.2 - offsets.2];
    aod.extend(&base.aod[..extra]);
    aoa.extend(&base.aoa[..extra]);
    dop.extend(&base.doppler[..extra]);
    let grid = Grid3D::from_points(aod, aoa, dop, sector()).unwrap();
    let dict = Dictionary::build(grid, &cfg, &tx).unwrap();
    let atom = crate::dictionary::atom(truth.0, truth.1, truth.2, &cfg, &tx);
    let l = 6;
    let mut y = Mat::<c64>::zeros(atom.len(), l);
    for c in 0..l {
        let b = complex_normal(&mut rng, 1.0) * amp;
        for (i, a) in atom.iter().enumerate() {
            y[(i, c)] = a * b + complex_normal(&mut rng, 1.0);
        }
    }
    let batch = SnapshotBatch { y, tx, n_rx: cfg.n_rx };
    (dict, batch)
}

#[test]
fn posterior_scalar_case() {
    let d = Mat::from_fn(3, 1, |i, _| c64::new(1.0 + i as f64, -0.5 * i as f64));
    let y = Mat::from_fn(3, 1, |i, _| c64::new(0.3 * i as f64, 1.0));
    let (z, s2) = (0.7, 0.5);
    let post = posterior_update(d.as_ref(), y.as_ref(), &[z], s2).unwrap();
    let dn: f64 = (0..3).map(|i| d[(i, 0)].norm_sqr()).sum();
    let sigma = 1.0 / (dn / s2 + z);
    let dhy: c64 = (0..3).map(|i| d[(i, 0)].conj() * y[(i, 0)]).sum();
    let mu = dhy * (sigma / s2);
    assert!((post.sigma[(0, 0)] - c64::new(sigma, 0.0)).norm() < 1e-14);
    assert!((post.mu[(0, 0)] - mu).norm() < 1e-14);
}

#[test]
fn posterior_matches_direct_inversion() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let d = random_cmat(&mut rng, 8, 5);
    let y = random_cmat(&mut rng, 8, 2);
    let z: Vec<f64> = (0..5).map(|_| rng.random_range(0.1..10.0)).collect();
    let post = posterior_update(d.as_ref(), y.as_ref(), &z, 0.3).unwrap();
    let (sigma, mu) = oracle_posterior(&d, &y, &z, 0.3);
    assert!(max_abs_diff(&post.sigma, &sigma) <= 1e-10);
    assert!(max_abs_diff(&post.mu, &mu) <= 1e-10);
}

#[test]
fn huge_precision_zeroes_row() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let d = random_cmat(&mut rng, 10, 4);
    let y = random_cmat(&mut rng, 10, 3);
    let post = posterior_update(d.as_ref(), y.as_ref(), &[1.0, 1e12, 1.0, 1.0], 0.1).unwrap();
    let row: f64 = (0..3).map(|l| post.mu[(1, l)].norm_sqr()).sum::<f64>().sqrt();
    assert!(row <= 1e-8 * y.norm_l2());
}

#[test]
fn posterior_rejects_bad_shapes() {
    let d = Mat::<c64>::zeros(4, 3);
    let y = Mat::<c64>::zeros(5, 1);
    assert!(posterior_update(d.as_ref(), y.as_ref(), &[1.0; 3], 1.0).is_err());
    let y = Mat::<c64>::zeros(4, 1);
    assert!(posterior_update(d.as_ref(), y.as_ref(), &[1.0; 2], 1.0).is_err());
}

#[test]
fn hyperparams_empty_data_limit() {
    let mu = Mat::<c64>::zeros(3, 4);
    let sigma = Mat::<c64>::zeros(3, 3);
    let z = hyperparam_update(mu.as_ref(), sigma.as_ref(), 1e-4, 1e-4);
    for v in z {
        assert!((v - (1e-4 + 4.0) / 1e-4).abs() < 1e-6);
    }
}

#[test]
fn hyperparams_unit_energy() {
    let mu = Mat::from_fn(1, 1, |_, _| c64::new(0.6, 0.0));
    let sigma = Mat::from_fn(1, 1, |_, _| c64::new(1.0 - 0.36, 0.0));
    let z = hyperparam_update(mu.as_ref(), sigma.as_ref(), 1e-4, 1e-4);
    assert!((z[0] - 1.0).abs() < 1e-12);
}

#[test]
fn hyperparams_match_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let d = random_cmat(&mut rng, 9, 6);
    let y = random_cmat(&mut rng, 9, 3);
    let post = posterior_update(d.as_ref(), y.as_ref(), &[0.5, 1.0, 2.0, 3.0, 4.0, 5.0], 0.2).unwrap();
    let (a, b) = (0.01, 0.02);
    let z = hyperparam_update(post.mu.as_ref(), post.sigma.as_ref(), a, b);
    for g in 0..6 {
        let mut den = b;
        for l in 0..3 {
            den += post.mu[(g, l)].norm_sqr() + post.sigma[(g, g)].re;
        }
        let want = (a + 3.0) / den;
        assert!((z[g] - want).abs() <= 1e-14 * want);
    }
}

/// Random posterior state on a small dictionary, with all rows active.
struct OffsetFixture {
    dict: Dictionary,
    y: CMat,
    post: Posterior,
    eps: [Vec<f64>; 3],
    active: Vec<usize>,
}

fn offset_fixture(seed: u64) -> OffsetFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = rng.random_range(4..12);
    let dict = random_dict(g, seed ^ 0x5151);
    let batch = synth(&dict, &[0, 1], 3, 0.5, &mut rng);
    let z: Vec<f64> = (0..g).map(|_| rng.random_range(0.01..2.0)).collect();
    let post = posterior_update(dict.psi.as_ref(), batch.y.as_ref(), &z, 0.5).unwrap();
    let eps = [(); 3].map(|_| (0..g).map(|_| rng.random_range(-0.02..0.02)).collect::<Vec<f64>>());
    OffsetFixture {
        dict,
        y: batch.y,
        post,
        eps,
        active: (0..g).collect(),
    }
}

impl OffsetFixture {
    fn problem(&self, clip: Option<[f64; 3]>, decouple: bool) -> OffsetProblem<'_> {
        OffsetProblem {
            dict: &self.dict,
            y: self.y.as_ref(),
            mu: self.post.mu.as_ref(),
            sigma: self.post.sigma.as_ref(),
            eps: [&self.eps[0], &self.eps[1], &self.eps[2]],
            active: &self.active,
            rows: &self.active,
            clip,
            pinv_tol: 1e-10,
            psd_tol: 1e-8,
            decouple,
        }
    }
}

#[test]
fn offset_update_is_stationary() {
    for seed in 0..10 {
        let fx = offset_fixture(seed);
        for decouple in [false, true] {
            for dim in 0..3 {
                let upd = offset_update(&fx.problem(None, decouple), dim).unwrap();
                let grad = upd.gradient(&upd.local());
                let gn = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
                let pn = upd.p.iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!(gn <= 1e-8 * pn, "seed {seed} dim {dim}: {gn} vs {pn}");
            }
        }
    }
}

#[test]
fn offset_surrogate_matches_expected_misfit() {
    // Without decoupling the surrogate is exactly the drop of the expected
    // misfit E||Y - D B||^2 when one offset block moves.
    let fx = offset_fixture(3);
    let prob = fx.problem(None, false);
    let upd = offset_update(&prob, 1).unwrap();
    let l = fx.y.ncols() as f64;
    let misfit = |e: &[f64]| {
        let mut eps = fx.eps.clone();
        eps[1] = e.to_vec();
        let d = crate::dictionary::offgrid_sensing(&fx.dict, &eps[0], &eps[1], &eps[2]).unwrap();
        let r = &fx.y - &d * &fx.post.mu;
        let tr = (d.as_ref() * fx.post.sigma.as_ref() * d.adjoint()).diagonal().column_vector().iter().map(|v| v.re).sum::<f64>();
        r.squared_norm_l2() + l * tr
    };
    let g = fx.active.len();
    let zero = vec![0.0; g];
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..5 {
        let e: Vec<f64> = (0..g).map(|_| rng.random_range(-0.05..0.05)).collect();
        let drop = misfit(&zero) - misfit(&e);
        let sur = upd.objective(&e);
        assert!((drop - sur).abs() <= 1e-8 * drop.abs().max(1.0), "{drop} vs {sur}");
    }
}

#[test]
fn offset_update_with_clip_respects_bound() {
    let fx = offset_fixture(5);
    let bound = [1e-4, 1e-4, 1e-4];
    for dim in 0..3 {
        let upd = offset_update(&fx.problem(Some(bound), true), dim).unwrap();
        for (k, &g) in upd.rows.iter().enumerate() {
            assert!(upd.eps[g].abs() <= bound[dim] + 1e-15);
            if !upd.clipped[k] {
                assert!(upd.eps[g].abs() <= bound[dim]);
            }
        }
        assert!(upd.objective(&upd.local()) >= -1e-10);
    }
}

#[test]
fn offset_update_leaves_other_rows_zero() {
    let fx = offset_fixture(6);
    let rows = vec![0, 2];
    let mut prob = fx.problem(None, true);
    prob.rows = &rows;
    let upd = offset_update(&prob, 0).unwrap();
    for g in 0..fx.active.len() {
        if !rows.contains(&g) {
            assert_eq!(upd.eps[g], 0.0);
        }
    }
}

#[test]
fn noiseless_on_grid_offsets_vanish() {
    let dict = random_dict(20, 21);
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let batch = synth(&dict, &[3, 7], 4, 0.0, &mut rng);
    let s2 = 1e-12;
    let z = vec![1.0; 20];
    let post = posterior_update(dict.psi.as_ref(), batch.y.as_ref(), &z, s2).unwrap();
    let zeros = vec![0.0; 20];
    let active: Vec<usize> = (0..20).collect();
    let support = vec![3, 7];
    for decouple in [false, true] {
        for dim in 0..3 {
            let prob = OffsetProblem {
                dict: &dict,
                y: batch.y.as_ref(),
                mu: post.mu.as_ref(),
                sigma: post.sigma.as_ref(),
                eps: [&zeros, &zeros, &zeros],
                active: &active,
                rows: &support,
                clip: None,
                pinv_tol: 1e-10,
                psd_tol: 1e-8,
                decouple,
            };
            let upd = offset_update(&prob, dim).unwrap();
            for &g in &support {
                assert!(upd.eps[g].abs() <= 1e-4, "dim {dim} row {g}: {}", upd.eps[g]);
            }
        }
    }
}

#[test]
fn single_offgrid_target_recovered_in_one_iteration() {
    let truth = (0.9, 2.2, 0.3);
    let (dict, batch) = offgrid_single(truth, (0.01, 0.0, 0.0), 3, 10.0, 31);
    let cfg = SblConfig {
        max_iters: 1,
        offset_clip: 1.0,
        ..SblConfig::default()
    };
    let run = run_sbl(&batch, &dict, &cfg).unwrap();
    let moved = run.state.grid.aod[0] - dict.grid.aod[0];
    assert!((moved - 0.01).abs() <= 0.002, "moved {moved}");
}

#[test]
fn grid_update_examples() {
    let mut grid = sample_grid(6, sector(), 0.1, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let before = grid.clone();
    let z = vec![0.0; 6];
    assert_eq!(grid_update(&mut grid, [&z, &z, &z]), 0.0);
    assert_eq!(grid, before);

    let mut e = vec![0.0; 6];
    e[2] = 0.003;
    let moved = grid_update(&mut grid, [&z, &e, &z]);
    assert!((moved - 0.003).abs() < 1e-15);
    for g in 0..6 {
        let (a, b) = (grid.tuple(g), before.tuple(g));
        if g == 2 {
            assert_eq!((a.0, a.2), (b.0, b.2));
            assert!((a.1 - b.1 - 0.003).abs() < 1e-15);
        } else {
            assert_eq!(a, b);
        }
    }

    // movement past a span edge is clamped
    let mut big = vec![0.0; 6];
    big[0] = 10.0;
    grid_update(&mut grid, [&z, &z, &big]);
    assert_eq!(grid.doppler[0], 1.5);
}

#[test]
fn single_target_converges_monotonically() {
    let truth = (0.9, 2.2, 0.3);
    let (dict, batch) = offgrid_single(truth, (0.03, -0.03, 0.04), 10, 1e3, 41);
    let mut errs = Vec::new();
    for iters in 1..=12 {
        let cfg = SblConfig {
            max_iters: iters,
            offset_clip: 1.0,
            ..SblConfig::default()
        };
        let run = run_sbl(&batch, &dict, &cfg).unwrap();
        errs.push((run.state.grid.aod[0] - truth.0).abs());
    }
    // monotone down to the estimation floor set by the noise (~5e-6 here)
    for k in 3..errs.len() {
        assert!(errs[k] <= errs[k - 1] + 1e-5, "{errs:?}");
    }
    assert!(errs[errs.len() - 1] < 2e-5, "{errs:?}");
}

#[test]
fn prune_examples() {
    let grid = sample_grid(5, sector(), 0.1, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let mu = Mat::from_fn(5, 2, |i, j| c64::new(1.0 + i as f64, j as f64));
    let est = prune(&[1.0, 1e6, 1.0, 1e6, 1.0], &mu, &grid, 20.0);
    assert_eq!(est.support, vec![0, 2, 4]);
    for g in [1, 3] {
        for l in 0..2 {
            assert_eq!(est.b_hat[(g, l)], c64::new(0.0, 0.0));
        }
    }
    assert_eq!(est.tuples[1], grid.tuple(2));

    let est = prune(&[3.0; 5], &mu, &grid, 20.0);
    assert_eq!(est.support, vec![0, 1, 2, 3, 4]);

    let est = prune(&[5.0, 1.0, 2.0, 1e3, 3.0], &mu, &grid, 20.0);
    assert_eq!(est.support, vec![1, 2, 4, 0]);
}

#[test]
fn coincident_rows_are_merged() {
    let grid = sample_grid(6, sector(), 0.1, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let mut est = prune(&[1.0, 2.0, 3.0, 1e6, 1e6, 1e6], &Mat::from_fn(6, 2, |i, _| c64::new(1.0 + i as f64, 0.0)), &grid, 20.0);
    let cell = grid.cell_scale();
    // row 2 sits a hair away from row 0, row 1 is far from both
    est.tuples[2] = (est.tuples[0].0 + 1e-4 * cell[0], est.tuples[0].1, est.tuples[0].2 - 1e-4 * cell[2]);
    let merged = merge_coincident(est.clone(), cell, 0.01);
    assert_eq!(merged.support, vec![0, 1]);
    assert_eq!(merged.b_hat[(0, 0)], c64::new(4.0, 0.0));
    assert_eq!(merged.b_hat[(2, 1)], c64::new(0.0, 0.0));
    assert_eq!(merged.b_hat[(1, 0)], c64::new(2.0, 0.0));
    assert_eq!(merge_coincident(est.clone(), cell, 0.0).support, est.support);
}

#[test]
fn on_grid_target_exact_recovery() {
    let dict = random_dict(40, 51);
    let mut rng = ChaCha8Rng::seed_from_u64(52);
    let batch = synth(&dict, &[17], 6, 1e-6, &mut rng);
    let cfg = SblConfig {
        noise_var: 1e-6,
        ..SblConfig::default()
    };
    let run = run_sbl(&batch, &dict, &cfg).unwrap();
    assert_eq!(run.estimate.support, vec![17]);
    let (a, b) = (run.estimate.tuples[0], dict.grid.tuple(17));
    assert!((a.0 - b.0).abs() <= 1e-5 && (a.1 - b.1).abs() <= 1e-5 && (a.2 - b.2).abs() <= 1e-5);
}

#[test]
fn noise_only_support_stays_at_floor() {
    let dict = random_dict(60, 61);
    let mut rng = ChaCha8Rng::seed_from_u64(62);
    let batch = synth(&dict, &[], 6, 1.0, &mut rng);
    let run = run_sbl(&batch, &dict, &SblConfig::default()).unwrap();
    for &g in &run.estimate.support {
        let norm = run.state.grid.tuple(g);
        let atom = crate::dictionary::atom(norm.0, norm.1, norm.2, &dict.cfg, &dict.tx);
        let an = atom.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        for l in 0..6 {
            assert!(run.estimate.b_hat[(g, l)].norm() <= 3.0 / an, "row {g}");
        }
    }
}

#[test]
fn joint_rescaling_keeps_support() {
    let dict = random_dict(50, 71);
    let mut rng = ChaCha8Rng::seed_from_u64(72);
    let batch = synth(&dict, &[4, 9, 30], 6, 0.5, &mut rng);
    let base = run_sbl(&batch, &dict, &SblConfig { noise_var: 0.5, ..SblConfig::default() }).unwrap();
    let c = 7.0;
    let mut scaled = batch.clone();
    for j in 0..scaled.y.ncols() {
        for i in 0..scaled.y.nrows() {
            scaled.y[(i, j)] *= c;
        }
    }
    let run = run_sbl(&scaled, &dict, &SblConfig { noise_var: 0.5 * c * c, ..SblConfig::default() }).unwrap();
    let mut a = base.estimate.support.clone();
    let mut b = run.estimate.support.clone();
    a.sort();
    b.sort();
    assert_eq!(a, b);
}

#[test]
fn final_covariance_is_hermitian_pd() {
    let dict = random_dict(30, 81);
    let mut rng = ChaCha8Rng::seed_from_u64(82);
    let batch = synth(&dict, &[2, 5], 4, 1.0, &mut rng);
    let run = run_sbl(&batch, &dict, &SblConfig { max_iters: 20, ..SblConfig::default() }).unwrap();
    let act = &run.state.active;
    let s = crate::linalg::select_rows(run.state.sigma.as_ref(), act);
    let s = crate::linalg::select_columns(s.as_ref(), act);
    assert_hermitian_pd(&s);
}

fn assert_hermitian_pd(s: &CMat) {
    let n = s.nrows();
    for i in 0..n {
        for j in 0..n {
            assert!((s[(i, j)] - s[(j, i)].conj()).norm() <= 1e-12 * s[(i, i)].re.abs().max(1e-300));
        }
    }
    let eig = s.self_adjoint_eigenvalues(faer::Side::Lower).unwrap();
    assert!(eig[0] > 0.0, "{eig:?}");
}

#[test]
fn trace_and_json_outputs() {
    let dict = random_dict(20, 91);
    let mut rng = ChaCha8Rng::seed_from_u64(92);
    let batch = synth(&dict, &[1], 2, 0.1, &mut rng);
    let run = run_sbl(&batch, &dict, &SblConfig { max_iters: 5, noise_var: 0.1, ..SblConfig::default() }).unwrap();
    assert_eq!(run.trace.len(), run.state.iter);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    write_trace_csv(&path, &run.trace).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("iter,max_move,min_z,max_z,residual_norm"));
    assert_eq!(text.lines().count(), run.trace.len() + 1);

    let json = run.estimate.to_json();
    let rows = json["support"].as_array().unwrap();
    assert_eq!(rows.len(), run.estimate.support.len());
    assert_eq!(rows[0]["rcs"].as_array().unwrap().len(), 2);
}

#[test]
fn config_validation() {
    assert!(SblConfig::default().validate().is_ok());
    let bad = [
        SblConfig { a: 0.0, ..SblConfig::default() },
        SblConfig { noise_var: -1.0, ..SblConfig::default() },
        SblConfig { offset_clip: 1.5, ..SblConfig::default() },
        SblConfig { prune_factor: 1.0, ..SblConfig::default() },
        SblConfig { max_iters: 0, ..SblConfig::default() },
        SblConfig { anneal_rate: 0.0, ..SblConfig::default() },
        SblConfig { refine_factor: 0.5, ..SblConfig::default() },
    ];
    for cfg in bad {
        assert!(cfg.validate().is_err(), "{cfg:?}");
    }
}

#[test]
fn dimension_mismatch_is_reported() {
    let dict = random_dict(10, 101);
    let batch = SnapshotBatch {
        y: Mat::zeros(5, 2),
        tx: dict.tx.clone(),
        n_rx: 6,
    };
    assert!(matches!(run_sbl(&batch, &dict, &SblConfig::default()), Err(Error::Dimension(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn posterior_oracle_random(seed in 0u64..10_000, g in 1usize..8, m in 2usize..12, l in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = random_cmat(&mut rng, m, g);
        let y = random_cmat(&mut rng, m, l);
        let z: Vec<f64> = (0..g).map(|_| rng.random_range(0.05..5.0)).collect();
        let s2 = rng.random_range(0.05..2.0);
        let post = posterior_update(d.as_ref(), y.as_ref(), &z, s2).unwrap();
        let (sigma, mu) = oracle_posterior(&d, &y, &z, s2);
        prop_assert!(max_abs_diff(&post.sigma, &sigma) <= 1e-10);
        prop_assert!(max_abs_diff(&post.mu, &mu) <= 1e-10);
        assert_hermitian_pd(&post.sigma);
    }

    #[test]
    fn offset_update_never_decreases_surrogate(seed in 0u64..10_000, dim in 0usize..3, clip in 1e-4f64..0.1) {
        let fx = offset_fixture(seed);
        let upd = offset_update(&fx.problem(Some([clip; 3]), true), dim).unwrap();
        let zero = vec![0.0; upd.rows.len()];
        prop_assert!(upd.objective(&upd.local()) >= upd.objective(&zero) - 1e-10);
    }
}

