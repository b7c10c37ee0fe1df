//! Experiment configs, Monte Carlo sweeps and scoring.

pub mod config;
pub mod metrics;
pub mod runner;

pub use config::{Estimator, ExperimentConfig, PointSetup, SweepAxis};
pub use metrics::{score_nmse, score_rmse, MetricRow};
pub use runner::{run_experiment, run_trial, trial_seed, ExperimentReport, TrialRecord};
