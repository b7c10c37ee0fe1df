//! Monte Carlo sweeps over scene, grid and estimator settings.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{Estimator, ExperimentConfig, PointSetup, SweepAxis};
use super::metrics::{aligned_rows, ci95, mean, rmse_ci95, score_nmse, score_rmse, MetricRow};
use crate::baselines::{run_mfocuss, run_somp};
use crate::bounds::bound_report;
use crate::dictionary::{sample_grid, Dictionary};
use crate::error::{Error, Result};
use crate::linalg::frobenius_sq;
use crate::postproc::{filter_clutter, localize, match_to_truth, velocity_from_doppler};
use crate::sbl::{run_sbl, SparseEstimate};
use crate::scene::{simulate_snapshots, ComponentKind, GroundTruth, SnapshotBatch};

pub const SCHEMA_VERSION: u32 = 1;

/// A target counts as recovered when both angles are within this many
/// degrees of the truth ...
pub const RECOVERY_ANGLE_DEG: f64 = 1.0;
/// ... and the Doppler within this many radians.
pub const RECOVERY_DOPPLER: f64 = 0.05;

pub const SEED_DERIVATION: &str = "ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64((point << 32) | trial))); \
the stream draws the transmit matrix, the RCS values and the noise, then the grid";

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn trial_seed(base: u64, point: usize, trial: usize) -> u64 {
    splitmix64(base ^ splitmix64(((point as u64) << 32) | trial as u64))
}

/// Simulated batch plus the dictionary built on a fresh grid.
pub struct TrialData {
    pub batch: SnapshotBatch,
    pub truth: GroundTruth,
    pub dict: Option<Dictionary>,
}

/// Draw one trial. The grid is sampled after the snapshots so that skipping
/// it leaves the batch unchanged.
pub fn prepare_trial(setup: &PointSetup, jitter: f64, seed: u64, with_dict: bool) -> Result<TrialData> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (batch, truth) = simulate_snapshots(&setup.scene, setup.snapshots, &mut rng)?;
    let dict = if with_dict {
        let grid = sample_grid(setup.grid_size, setup.spans, jitter, &mut rng)?;
        Some(Dictionary::build(grid, &setup.scene.waveform, &batch.tx)?)
    } else {
        None
    };
    Ok(TrialData { batch, truth, dict })
}

pub fn run_estimator(est: Estimator, batch: &SnapshotBatch, dict: &Dictionary, setup: &PointSetup, cfg: &ExperimentConfig) -> Result<SparseEstimate> {
    match est {
        Estimator::Sbl => Ok(run_sbl(batch, dict, &setup.sbl)?.estimate),
        Estimator::SblOngrid => {
            let mut sbl = setup.sbl;
            sbl.offgrid = false;
            Ok(run_sbl(batch, dict, &sbl)?.estimate)
        }
        Estimator::Somp => {
            let somp = cfg.somp.resolve(setup.scene.n_components())?;
            Ok(run_somp(batch, dict, &somp)?.estimate)
        }
        Estimator::Mfocuss => Ok(run_mfocuss(batch, dict, &cfg.mfocuss)?.estimate),
    }
}

/// Errors of one estimate matched to one true target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TargetError {
    pub aod_deg: f64,
    pub aoa_deg: f64,
    pub doppler: f64,
    /// `None` when the estimated angles cannot be localized.
    pub position_m: Option<(f64, f64)>,
    pub velocity_mps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialScore {
    pub support_size: usize,
    /// Estimates kept as targets after the clutter filter.
    pub target_estimates: usize,
    pub errors: Vec<TargetError>,
    pub misses: usize,
    pub false_alarms: usize,
    /// Targets within the recovery tolerance when all estimates are matched
    /// against all scatterers.
    pub hits: usize,
    pub recovered: bool,
    /// Every clutter scatterer has an estimate inside the clutter band.
    pub clutter_rejected: bool,
    pub nmse: Option<f64>,
}

pub fn score_estimate(estimate: &SparseEstimate, truth: &GroundTruth, setup: &PointSetup) -> TrialScore {
    let widths = setup.spans.widths();
    let receiver = setup.scene.receiver_polar;
    let wf = &setup.scene.waveform;
    let tuples = estimate.to_tuples();
    let (targets, _) = filter_clutter(&tuples, &setup.clutter_rule);

    let true_targets: Vec<_> = truth.targets().collect();
    let tt: Vec<_> = true_targets.iter().map(|c| (c.geometry.aod, c.geometry.aoa, c.geometry.doppler)).collect();
    let et: Vec<_> = targets.iter().map(|t| t.params()).collect();
    let assign = match_to_truth(&et, &tt, widths, None);
    let errors = assign
        .pairs
        .iter()
        .map(|&(e, t)| {
            let (est, tr) = (&targets[e], &true_targets[t].geometry);
            let position_m = localize(est.aod, est.aoa, receiver)
                .ok()
                .map(|loc| (loc.position.0 - tr.position.0, loc.position.1 - tr.position.1));
            TargetError {
                aod_deg: (est.aod - tr.aod).to_degrees(),
                aoa_deg: (est.aoa - tr.aoa).to_degrees(),
                doppler: est.doppler - tr.doppler,
                position_m,
                velocity_mps: velocity_from_doppler(est.doppler, wf) - tr.velocity,
            }
        })
        .collect();

    let all_est: Vec<_> = tuples.iter().map(|t| t.params()).collect();
    let all_truth: Vec<_> = truth.components.iter().map(|c| (c.geometry.aod, c.geometry.aoa, c.geometry.doppler)).collect();
    let full = match_to_truth(&all_est, &all_truth, widths, None);
    let mut hits = 0;
    let mut clutter_found = 0;
    for &(e, t) in &full.pairs {
        let (est, tr) = (all_est[e], &truth.components[t].geometry);
        match tr.kind {
            ComponentKind::Target => {
                let ok = (est.0 - tr.aod).abs() <= RECOVERY_ANGLE_DEG * PI / 180.0
                    && (est.1 - tr.aoa).abs() <= RECOVERY_ANGLE_DEG * PI / 180.0
                    && (est.2 - tr.doppler).abs() <= RECOVERY_DOPPLER;
                hits += usize::from(ok);
            }
            ComponentKind::Clutter => clutter_found += usize::from(setup.clutter_rule.is_clutter(est.2)),
        }
    }
    let n_clutter = truth.clutter().count();
    let rows: Vec<_> = tuples.iter().map(|t| t.rcs_row.clone()).collect();
    let nmse = aligned_rows(&rows, &truth.effective_rows(), &full)
        .and_then(|(bh, bt)| score_nmse(&bh, &bt))
        .ok();
    TrialScore {
        support_size: estimate.support.len(),
        target_estimates: targets.len(),
        errors,
        misses: assign.misses.len(),
        false_alarms: assign.false_alarms.len(),
        hits,
        recovered: hits == tt.len(),
        clutter_rejected: clutter_found == n_clutter,
        nmse,
    }
}

/// Bounds of one trial, averaged over the targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrialBounds {
    pub crb_aod: f64,
    pub crb_aoa: f64,
    pub crb_doppler: f64,
    pub crb_velocity: f64,
    /// BCRB on the RCS matrix over its squared norm.
    pub bcrb_nmse: f64,
}

pub fn trial_bounds(truth: &GroundTruth, batch: &SnapshotBatch, setup: &PointSetup, cfg: &ExperimentConfig) -> Result<TrialBounds> {
    let s = &setup.scene;
    let rep = bound_report(truth, &s.waveform, &batch.tx, s.noise_var, s.target_var, s.clutter_var, cfg.bounds_mode)?;
    let w = truth.targets().count() as f64;
    let norm = frobenius_sq(truth.effective_rows().as_ref());
    if !(norm > 0.0) {
        return Err(Error::ZeroNorm);
    }
    Ok(TrialBounds {
        crb_aod: rep.crb_theta / w,
        crb_aoa: rep.crb_phi / w,
        crb_doppler: rep.crb_omega / w,
        crb_velocity: rep.crb_velocity / w,
        bcrb_nmse: rep.bcrb_rcs / norm,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimatorOutcome {
    pub estimator: Estimator,
    pub score: std::result::Result<TrialScore, String>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrialRecord {
    pub point: usize,
    pub trial: usize,
    pub seed: u64,
    pub outcomes: Vec<EstimatorOutcome>,
    pub bounds: Option<std::result::Result<TrialBounds, String>>,
}

/// Run every enabled estimator on one trial. Failures are recorded, not
/// propagated.
pub fn run_trial(cfg: &ExperimentConfig, setup: &PointSetup, point: usize, trial: usize) -> TrialRecord {
    let seed = trial_seed(cfg.seed, point, trial);
    let mut rec = TrialRecord {
        point,
        trial,
        seed,
        outcomes: Vec::new(),
        bounds: None,
    };
    let data = match prepare_trial(setup, cfg.grid.jitter, seed, !cfg.estimators.is_empty()) {
        Ok(d) => d,
        Err(e) => {
            let msg = e.to_string();
            rec.outcomes = cfg
                .estimators
                .iter()
                .map(|&estimator| EstimatorOutcome {
                    estimator,
                    score: Err(msg.clone()),
                    seconds: 0.0,
                })
                .collect();
            if cfg.bounds {
                rec.bounds = Some(Err(msg));
            }
            return rec;
        }
    };
    if let Some(dict) = &data.dict {
        for &estimator in &cfg.estimators {
            let start = Instant::now();
            let score = run_estimator(estimator, &data.batch, dict, setup, cfg)
                .map(|est| score_estimate(&est, &data.truth, setup))
                .map_err(|e| e.to_string());
            rec.outcomes.push(EstimatorOutcome {
                estimator,
                score,
                seconds: start.elapsed().as_secs_f64(),
            });
        }
    }
    if cfg.bounds {
        rec.bounds = Some(trial_bounds(&data.truth, &data.batch, setup, cfg).map_err(|e| e.to_string()));
    }
    rec
}

#[derive(Debug, Clone, Serialize)]
pub struct FailureRecord {
    pub point: usize,
    pub trial: usize,
    pub estimator: String,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub rows: Vec<MetricRow>,
    pub records: Vec<TrialRecord>,
    pub wall_clock_s: f64,
}

impl ExperimentReport {
    pub fn failures(&self) -> Vec<FailureRecord> {
        let mut out = Vec::new();
        for r in &self.records {
            for o in &r.outcomes {
                if let Err(e) = &o.score {
                    out.push(FailureRecord {
                        point: r.point,
                        trial: r.trial,
                        estimator: o.estimator.tag().into(),
                        error: e.clone(),
                    });
                }
            }
            if let Some(Err(e)) = &r.bounds {
                out.push(FailureRecord {
                    point: r.point,
                    trial: r.trial,
                    estimator: "bounds".into(),
                    error: e.clone(),
                });
            }
        }
        out
    }

    /// Failed runs over attempted runs.
    pub fn failure_rate(&self) -> f64 {
        let runs: usize = self.records.iter().map(|r| r.outcomes.len() + usize::from(r.bounds.is_some())).sum();
        if runs == 0 { 0.0 } else { self.failures().len() as f64 / runs as f64 }
    }

    /// Look up one aggregated value.
    pub fn value(&self, sweep_value: f64, estimator: &str, metric: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.sweep_value == sweep_value && r.estimator == estimator && r.metric == metric)
            .and_then(|r| r.value)
    }

    pub fn csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }

    pub fn metadata(&self, cfg: &ExperimentConfig) -> serde_json::Value {
        let mut timing: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for r in &self.records {
            for o in &r.outcomes {
                timing.entry(o.estimator.tag()).or_default().push(o.seconds);
            }
        }
        let timing: BTreeMap<&str, serde_json::Value> = timing
            .into_iter()
            .map(|(k, v)| {
                let total: f64 = v.iter().sum();
                (k, serde_json::json!({ "runs": v.len(), "total_s": total, "mean_s": mean(&v) }))
            })
            .collect();
        let seeds: Vec<[u64; 3]> = self.records.iter().map(|r| [r.point as u64, r.trial as u64, r.seed]).collect();
        serde_json::json!({
            "schema_version": SCHEMA_VERSION,
            "software": { "name": env!("CARGO_PKG_NAME"), "version": env!("CARGO_PKG_VERSION") },
            "config": cfg,
            "sweep": { "axis": self.axis.tag(), "values": self.values },
            "seeds": { "base": cfg.seed, "derivation": SEED_DERIVATION, "point_trial_seed": seeds },
            "recovery_tolerance": { "angle_deg": RECOVERY_ANGLE_DEG, "doppler_rad": RECOVERY_DOPPLER },
            "failures": self.failures(),
            "wall_clock": { "total_s": self.wall_clock_s, "per_estimator": timing },
        })
    }

    /// Write the CSV and its metadata sidecar, each via a temporary file.
    pub fn write(&self, cfg: &ExperimentConfig, csv_path: &Path, meta_path: Option<&Path>) -> Result<PathBuf> {
        write_atomic(csv_path, self.csv_string()?.as_bytes())?;
        let meta = meta_path.map_or_else(|| csv_path.with_extension("json"), Path::to_path_buf);
        write_atomic(&meta, serde_json::to_string_pretty(&self.metadata(cfg))?.as_bytes())?;
        Ok(meta)
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn push(rows: &mut Vec<MetricRow>, axis: SweepAxis, value: f64, est: &str, metric: &str, v: Option<f64>, trials: usize, ci: Option<f64>) {
    rows.push(MetricRow {
        sweep_axis: axis.tag().into(),
        sweep_value: value,
        estimator: est.into(),
        metric: metric.into(),
        value: v.filter(|x| x.is_finite()),
        trials,
        ci95: ci.filter(|x| x.is_finite()),
    });
}

fn rate(flags: &[bool]) -> (Option<f64>, Option<f64>) {
    let xs: Vec<f64> = flags.iter().map(|&b| f64::from(u8::from(b))).collect();
    (mean(&xs), ci95(&xs))
}

fn estimator_rows(rows: &mut Vec<MetricRow>, axis: SweepAxis, value: f64, est: Estimator, scores: &[&TrialScore], attempted: usize) {
    let tag = est.tag();
    let n = scores.len();
    let errs = |f: &dyn Fn(&TargetError) -> Option<f64>| -> Vec<f64> { scores.iter().flat_map(|s| s.errors.iter().filter_map(f)).collect() };
    let series: [(&str, Vec<f64>); 6] = [
        ("rmse_aod_deg", errs(&|e| Some(e.aod_deg))),
        ("rmse_aoa_deg", errs(&|e| Some(e.aoa_deg))),
        ("rmse_doppler", errs(&|e| Some(e.doppler))),
        ("rmse_x_m", errs(&|e| e.position_m.map(|p| p.0))),
        ("rmse_y_m", errs(&|e| e.position_m.map(|p| p.1))),
        ("rmse_v_mps", errs(&|e| Some(e.velocity_mps))),
    ];
    for (metric, xs) in &series {
        push(rows, axis, value, tag, metric, score_rmse(xs), n, rmse_ci95(xs));
    }
    let nmse: Vec<f64> = scores.iter().filter_map(|s| s.nmse).collect();
    let m = mean(&nmse);
    push(rows, axis, value, tag, "nmse_rcs", m, nmse.len(), ci95(&nmse));
    push(rows, axis, value, tag, "nmse_rcs_db", m.map(|x| 10.0 * x.log10()), nmse.len(), None);
    let per_target: Vec<f64> = scores
        .iter()
        .flat_map(|s| {
            let w = s.errors.len() + s.misses;
            (0..w).map(move |k| f64::from(u8::from(k < s.hits)))
        })
        .collect();
    push(rows, axis, value, tag, "hit_rate", mean(&per_target), n, ci95(&per_target));
    let (r, c) = rate(&scores.iter().map(|s| s.recovered).collect::<Vec<_>>());
    push(rows, axis, value, tag, "recovery_rate", r, n, c);
    let (r, c) = rate(&scores.iter().map(|s| s.clutter_rejected).collect::<Vec<_>>());
    push(rows, axis, value, tag, "clutter_rejection_rate", r, n, c);
    for (metric, f) in [
        ("false_alarms", (|s: &TrialScore| s.false_alarms as f64) as fn(&TrialScore) -> f64),
        ("misses", |s| s.misses as f64),
        ("support_size", |s| s.support_size as f64),
    ] {
        let xs: Vec<f64> = scores.iter().map(|s| f(s)).collect();
        push(rows, axis, value, tag, metric, mean(&xs), n, ci95(&xs));
    }
    push(rows, axis, value, tag, "failures", Some((attempted - n) as f64), attempted, None);
}

fn bound_rows(rows: &mut Vec<MetricRow>, axis: SweepAxis, value: f64, bounds: &[&TrialBounds], attempted: usize) {
    let n = bounds.len();
    let avg = |f: fn(&TrialBounds) -> f64| mean(&bounds.iter().map(|b| f(b)).collect::<Vec<_>>());
    let root = |x: Option<f64>| x.map(f64::sqrt);
    push(rows, axis, value, "crb", "root_crb_aod_deg", root(avg(|b| b.crb_aod)).map(f64::to_degrees), n, None);
    push(rows, axis, value, "crb", "root_crb_aoa_deg", root(avg(|b| b.crb_aoa)).map(f64::to_degrees), n, None);
    push(rows, axis, value, "crb", "root_crb_doppler", root(avg(|b| b.crb_doppler)), n, None);
    push(rows, axis, value, "crb", "root_crb_v_mps", root(avg(|b| b.crb_velocity)), n, None);
    let b = avg(|b| b.bcrb_nmse);
    push(rows, axis, value, "bcrb", "nmse_rcs", b, n, None);
    push(rows, axis, value, "bcrb", "nmse_rcs_db", b.map(|x| 10.0 * x.log10()), n, None);
    push(rows, axis, value, "bcrb", "failures", Some((attempted - n) as f64), attempted, None);
}

fn aggregate(cfg: &ExperimentConfig, axis: SweepAxis, values: &[f64], records: &[TrialRecord]) -> Vec<MetricRow> {
    let mut rows = Vec::new();
    for (p, &value) in values.iter().enumerate() {
        let recs: Vec<&TrialRecord> = records.iter().filter(|r| r.point == p).collect();
        for &est in &cfg.estimators {
            let outcomes: Vec<&EstimatorOutcome> = recs.iter().flat_map(|r| r.outcomes.iter().filter(|o| o.estimator == est)).collect();
            let scores: Vec<&TrialScore> = outcomes.iter().filter_map(|o| o.score.as_ref().ok()).collect();
            estimator_rows(&mut rows, axis, value, est, &scores, outcomes.len());
        }
        if cfg.bounds {
            let bounds: Vec<&TrialBounds> = recs.iter().filter_map(|r| r.bounds.as_ref().and_then(|b| b.as_ref().ok())).collect();
            bound_rows(&mut rows, axis, value, &bounds, recs.len());
        }
    }
    rows
}

/// Run the whole sweep. Trials run in parallel; every trial owns its RNG
/// stream so the results do not depend on scheduling.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    // parallelism lives at the trial level
    faer::set_global_parallelism(faer::Par::Seq);
    let start = Instant::now();
    let (axis, values) = cfg.sweep.axis()?;
    let setups = values.iter().map(|&v| cfg.point(axis, v)).collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize)> = (0..values.len()).flat_map(|p| (0..cfg.trials).map(move |t| (p, t))).collect();
    let records: Vec<TrialRecord> = jobs.par_iter().map(|&(p, t)| run_trial(cfg, &setups[p], p, t)).collect();
    let rows = aggregate(cfg, axis, &values, &records);
    Ok(ExperimentReport {
        axis,
        values,
        rows,
        records,
        wall_clock_s: start.elapsed().as_secs_f64(),
    })
}
