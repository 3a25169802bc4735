//! Finite-sample simultaneous bounds on the false discovery proportion (FDP)
//! and false coverage proportion (FCP) of conformal selection rules.
//!
//! The null conformal p-values of `m` test points built from `n` calibration
//! points follow a distribution-free joint law. Sampling from that law lets us
//! calibrate, by Monte Carlo, an envelope `G(t)` that dominates the empirical
//! CDF of the null p-values at every threshold simultaneously. Everything else
//! in the crate is built on that envelope:
//!
//! - [`sampler`] draws from the joint law of conformal uniform variables.
//! - [`statistics`] holds the supremum-type summary statistics (KS, HC, THC, BJ).
//! - [`envelope`] turns Monte Carlo quantiles of a statistic into envelopes.
//! - [`fdp`] bounds the FDP of threshold rejection sets in outlier detection.
//! - [`selection`] covers conformal selection with clipped scores.
//! - [`diagnostics`] holds FCP bounds, the ECDF variance formula, CCV
//!   thresholds and the Benjamini-Hochberg helper.
//! - [`simulate`] generates synthetic experiments with ground truth.
//! - [`io`] reads and writes the CSV and JSON file formats used by the CLI.

pub mod diagnostics;
pub mod ecdf;
pub mod envelope;
pub mod error;
pub mod fdp;
pub mod io;
pub mod rng;
pub mod sampler;
pub mod selection;
pub mod simulate;
pub mod statistics;

pub use ecdf::EcdfCurve;
pub use envelope::{Direction, EnvelopeFamily, EnvelopeFunction, Scale};
pub use error::{Error, Result};
pub use fdp::{FdpBoundCurve, PValueVector};
pub use sampler::{SamplerConfig, SamplerMode, UniformSampleMatrix};
pub use statistics::{StatisticKind, SummaryStatisticSpec};
