//! Off-grid sparse Bayesian learning for joint AoD / AoA / Doppler / RCS
//! estimation in a bistatic MIMO radar with clutter, plus geometric
//! localization, Cramér-Rao bounds, greedy and reweighted baselines and a
//! Monte Carlo harness.

pub mod baselines;
pub mod bench;
pub mod bounds;
pub mod dictionary;
pub mod error;
pub mod linalg;
pub mod postproc;
pub mod sbl;
pub mod scene;

pub use error::{Error, Result};
pub use faer::c64;
