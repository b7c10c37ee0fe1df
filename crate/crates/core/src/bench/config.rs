//! Experiment configuration (TOML).

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{FocussConfig, SompConfig, SompStop};
use crate::bounds::RcsMode;
use crate::dictionary::Spans;
use crate::error::{Error, Result};
use crate::postproc::ClutterRule;
use crate::sbl::SblConfig;
use crate::scene::{ClutterPatch, RadarScene, Target, WaveformConfig};

fn db_to_lin(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Sbl,
    /// SBL with the offset updates switched off.
    SblOngrid,
    Somp,
    Mfocuss,
}

impl Estimator {
    pub fn tag(self) -> &'static str {
        match self {
            Estimator::Sbl => "sbl",
            Estimator::SblOngrid => "sbl_ongrid",
            Estimator::Somp => "somp",
            Estimator::Mfocuss => "mfocuss",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "sbl" => Ok(Estimator::Sbl),
            "sbl_ongrid" => Ok(Estimator::SblOngrid),
            "somp" => Ok(Estimator::Somp),
            "mfocuss" => Ok(Estimator::Mfocuss),
            other => Err(Error::config("estimators", format!("unknown estimator `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolarPoint {
    pub range_m: f64,
    pub orientation_deg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub range_m: f64,
    pub orientation_deg: f64,
    pub velocity_mps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub n_tx: usize,
    pub n_rx: usize,
    pub n_subpulses: usize,
    pub carrier_freq_hz: f64,
    pub subpulse_interval_s: f64,
    /// Receiver position in polar coordinates around the transmitter.
    pub receiver: PolarPoint,
    pub scnr_db: f64,
    pub target_var_db: f64,
    pub clutter_var_db: f64,
    pub noise_var: f64,
    #[serde(default)]
    pub targets: Vec<TargetSpec>,
    #[serde(default)]
    pub clutter: Vec<PolarPoint>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            n_tx: 6,
            n_rx: 6,
            n_subpulses: 16,
            carrier_freq_hz: 30e9,
            subpulse_interval_s: 40e-6,
            receiver: PolarPoint {
                range_m: 95.0,
                orientation_deg: 0.0,
            },
            scnr_db: -3.0,
            target_var_db: 10.0,
            clutter_var_db: 12.0,
            noise_var: 1.0,
            targets: vec![
                TargetSpec {
                    range_m: 20.66,
                    orientation_deg: 52.64,
                    velocity_mps: 5.0,
                },
                TargetSpec {
                    range_m: 25.11,
                    orientation_deg: 54.73,
                    velocity_mps: 2.0,
                },
                TargetSpec {
                    range_m: 51.13,
                    orientation_deg: 12.08,
                    velocity_mps: -10.0,
                },
            ],
            clutter: vec![
                PolarPoint {
                    range_m: 40.0,
                    orientation_deg: 30.0,
                },
                PolarPoint {
                    range_m: 60.0,
                    orientation_deg: 75.0,
                },
            ],
        }
    }
}

impl SceneConfig {
    pub fn build(&self) -> Result<RadarScene> {
        let deg = PI / 180.0;
        let waveform = WaveformConfig::new(self.n_tx, self.n_rx, self.n_subpulses, self.subpulse_interval_s, self.carrier_freq_hz);
        let receiver = (self.receiver.range_m, self.receiver.orientation_deg * deg);
        let mut scene = RadarScene {
            waveform,
            receiver_polar: receiver,
            targets: self
                .targets
                .iter()
                .map(|t| Target::new(t.range_m, t.orientation_deg * deg, t.velocity_mps))
                .collect(),
            clutter: self
                .clutter
                .iter()
                .map(|c| ClutterPatch::at_polar(c.range_m, c.orientation_deg * deg, receiver))
                .collect(),
            noise_var: self.noise_var,
            target_var: db_to_lin(self.target_var_db),
            clutter_var: db_to_lin(self.clutter_var_db),
            rng_seed: 0,
        };
        if !(self.noise_var > 0.0) {
            return Err(Error::config("scene.noise_var", "must be positive"));
        }
        scene.set_scnr_db(self.scnr_db);
        scene.validate().map_err(|e| Error::config("scene", e.to_string()))?;
        Ok(scene)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub size: usize,
    /// Jitter as a fraction of the per-dimension spacing.
    pub jitter: f64,
    pub aod_span_deg: [f64; 2],
    pub aoa_span_deg: [f64; 2],
    pub doppler_span: [f64; 2],
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            size: 150,
            jitter: 0.1,
            aod_span_deg: [0.0, 90.0],
            aoa_span_deg: [90.0, 180.0],
            doppler_span: [-1.5, 1.5],
        }
    }
}

impl GridConfig {
    pub fn spans(&self) -> Result<Spans> {
        let deg = PI / 180.0;
        let spans = Spans::new(
            (self.aod_span_deg[0] * deg, self.aod_span_deg[1] * deg),
            (self.aoa_span_deg[0] * deg, self.aoa_span_deg[1] * deg),
            (self.doppler_span[0], self.doppler_span[1]),
        );
        spans.validate().map_err(|e| Error::config("grid", e.to_string()))?;
        Ok(spans)
    }

    /// Grid size whose AoD spacing is closest to `interval_deg`.
    pub fn size_for_interval(&self, interval_deg: f64) -> Result<usize> {
        let width = self.aod_span_deg[1] - self.aod_span_deg[0];
        if !(interval_deg > 0.0) {
            return Err(Error::config("sweep.grid_interval", "intervals must be positive"));
        }
        let g = (width / interval_deg).round();
        if g < 2.0 {
            return Err(Error::config("sweep.grid_interval", format!("interval {interval_deg} deg leaves fewer than 2 grid points")));
        }
        Ok(g as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClutterRuleConfig {
    pub delta: f64,
    pub omega_max: f64,
}

impl Default for ClutterRuleConfig {
    fn default() -> Self {
        Self { delta: 2.0, omega_max: 1.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SompSection {
    /// Fixed number of atoms; defaults to the number of scatterers.
    pub sparsity: Option<usize>,
    /// Stop once the residual Frobenius norm drops below this.
    pub residual: Option<f64>,
}

impl SompSection {
    pub fn resolve(&self, n_components: usize) -> Result<SompConfig> {
        let stop = match (self.sparsity, self.residual) {
            (Some(_), Some(_)) => return Err(Error::config("somp", "set either `sparsity` or `residual`, not both")),
            (Some(k), None) => SompStop::Sparsity(k),
            (None, Some(r)) => SompStop::Residual(r),
            (None, None) => SompStop::Sparsity(n_components.max(1)),
        };
        Ok(SompConfig { stop })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    ScnrDb,
    TcrDb,
    Snapshots,
    GridInterval,
}

impl SweepAxis {
    pub fn tag(self) -> &'static str {
        match self {
            SweepAxis::ScnrDb => "scnr_db",
            SweepAxis::TcrDb => "tcr_db",
            SweepAxis::Snapshots => "snapshots",
            SweepAxis::GridInterval => "grid_interval",
        }
    }
}

/// Exactly one of the lists must be given.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub scnr_db: Option<Vec<f64>>,
    pub tcr_db: Option<Vec<f64>>,
    pub snapshots: Option<Vec<usize>>,
    /// AoD grid spacing in degrees; the grid size follows from the span.
    pub grid_interval: Option<Vec<f64>>,
}

impl SweepConfig {
    pub fn axis(&self) -> Result<(SweepAxis, Vec<f64>)> {
        let mut set = Vec::new();
        if let Some(v) = &self.scnr_db {
            set.push((SweepAxis::ScnrDb, v.clone()));
        }
        if let Some(v) = &self.tcr_db {
            set.push((SweepAxis::TcrDb, v.clone()));
        }
        if let Some(v) = &self.snapshots {
            set.push((SweepAxis::Snapshots, v.iter().map(|&x| x as f64).collect()));
        }
        if let Some(v) = &self.grid_interval {
            set.push((SweepAxis::GridInterval, v.clone()));
        }
        match set.len() {
            0 => Err(Error::config("sweep", "no sweep axis given")),
            1 => {
                let (axis, values) = set.pop().unwrap_or((SweepAxis::ScnrDb, Vec::new()));
                if values.is_empty() {
                    return Err(Error::config(format!("sweep.{}", axis.tag()), "empty value list"));
                }
                Ok((axis, values))
            }
            _ => Err(Error::config("sweep", "exactly one sweep axis must be given")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub csv: Option<PathBuf>,
    /// Defaults to the CSV path with a `.json` extension.
    pub metadata: Option<PathBuf>,
}

fn default_trials() -> usize {
    200
}
fn default_snapshots() -> usize {
    6
}
fn default_estimators() -> Vec<Estimator> {
    vec![Estimator::Sbl, Estimator::Somp, Estimator::Mfocuss]
}
fn default_failure_threshold() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    /// Monte Carlo trials per sweep point.
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Snapshots per trial, unless swept.
    #[serde(default = "default_snapshots")]
    pub snapshots: usize,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<Estimator>,
    #[serde(default)]
    pub bounds: bool,
    #[serde(default)]
    pub bounds_mode: RcsMode,
    /// Fraction of failed estimator runs above which a sweep reports
    /// partial failure.
    #[serde(default = "default_failure_threshold")]
    pub failure_threshold: f64,
    #[serde(default)]
    pub scene: SceneConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub clutter_rule: ClutterRuleConfig,
    #[serde(default)]
    pub sbl: SblConfig,
    #[serde(default)]
    pub somp: SompSection,
    #[serde(default)]
    pub mfocuss: FocussConfig,
    pub sweep: SweepConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let at = e.span().map_or_else(|| "document".to_string(), |s| format!("line {}", text[..s.start].lines().count().max(1)));
            Error::config(at, e.message().trim().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config("config", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::config("trials", "must be at least 1"));
        }
        if self.snapshots == 0 {
            return Err(Error::config("snapshots", "must be at least 1"));
        }
        if self.estimators.is_empty() && !self.bounds {
            return Err(Error::config("estimators", "nothing to run"));
        }
        if !(0.0..=1.0).contains(&self.failure_threshold) {
            return Err(Error::config("failure_threshold", "must lie in [0, 1]"));
        }
        if self.grid.size < 2 {
            return Err(Error::config("grid.size", "must be at least 2"));
        }
        if !(0.0..1.0).contains(&self.grid.jitter) {
            return Err(Error::config("grid.jitter", "must lie in [0, 1)"));
        }
        if !(self.clutter_rule.delta >= 0.0 && self.clutter_rule.omega_max > 0.0) {
            return Err(Error::config("clutter_rule", "delta must be non-negative and omega_max positive"));
        }
        self.grid.spans()?;
        self.scene.build()?;
        self.sbl.validate()?;
        self.somp.resolve(1)?;
        let (axis, values) = self.sweep.axis()?;
        if axis == SweepAxis::GridInterval {
            for v in &values {
                self.grid.size_for_interval(*v)?;
            }
        }
        if axis == SweepAxis::Snapshots && values.iter().any(|&v| v < 1.0) {
            return Err(Error::config("sweep.snapshots", "must be at least 1"));
        }
        Ok(())
    }

    /// Setup with no sweep value applied.
    pub fn base_point(&self) -> Result<PointSetup> {
        self.setup(self.scene.build()?, self.grid.size, self.snapshots)
    }

    /// Scene, grid size and snapshot count at one sweep value.
    pub fn point(&self, axis: SweepAxis, value: f64) -> Result<PointSetup> {
        let mut scene = self.scene.build()?;
        let mut grid_size = self.grid.size;
        let mut snapshots = self.snapshots;
        match axis {
            SweepAxis::ScnrDb => scene.set_scnr_db(value),
            SweepAxis::TcrDb => {
                // the SCNR stays at its configured value
                scene.set_tcr_db(value);
                scene.set_scnr_db(self.scene.scnr_db);
            }
            SweepAxis::Snapshots => snapshots = value as usize,
            SweepAxis::GridInterval => grid_size = self.grid.size_for_interval(value)?,
        }
        self.setup(scene, grid_size, snapshots)
    }

    fn setup(&self, scene: RadarScene, grid_size: usize, snapshots: usize) -> Result<PointSetup> {
        let mut sbl = self.sbl;
        // the noise level is a known input
        sbl.noise_var = scene.noise_var;
        Ok(PointSetup {
            scene,
            grid_size,
            snapshots,
            spans: self.grid.spans()?,
            clutter_rule: ClutterRule::new(self.clutter_rule.delta, self.clutter_rule.omega_max, grid_size),
            sbl,
        })
    }
}

/// Everything a trial at one sweep point needs.
#[derive(Debug, Clone)]
pub struct PointSetup {
    pub scene: RadarScene,
    pub grid_size: usize,
    pub snapshots: usize,
    pub spans: Spans,
    pub clutter_rule: ClutterRule,
    pub sbl: SblConfig,
}
