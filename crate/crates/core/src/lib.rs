//! Synthesis and lifetime extraction for two-state blinking (telegraph)
//! fluorescence traces.
//!
//! The pipeline is: [`sim`] produces a binned photocount trace with known
//! on/off lifetimes, [`dwell`] turns it into per-state dwell histograms, and
//! one of three estimators recovers the lifetimes:
//!
//! * [`lm`]: Levenberg-Marquardt fit of the dwell density to `y0 + A exp(-t/tau)`,
//! * [`mfr`]: multi-feature linear regression trained on simulated corpora,
//! * [`ga`]: a two-individual genetic algorithm scored by silhouette over
//!   K-means++ clusterings of histogram subsets.
//!
//! [`bench`] runs seeded trial grids over trace durations and reports
//! accuracy and precision per estimator.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod dwell;
pub mod error;
pub mod estimate;
pub mod ga;
pub mod io;
pub mod lm;
pub mod mfr;
pub mod seed;
pub mod sim;
pub mod units;

pub use dwell::{DwellHistogram, EmpiricalDensity, State, StateSequence};
pub use error::{BlinkError, Result};
pub use estimate::{Method, RateEstimate};
pub use sim::{BlinkTrace, DwellDistribution, EmitterModel, PhotonNoise, TrapChannel};
