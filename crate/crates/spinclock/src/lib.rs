//! Monte Carlo simulator and analysis pipeline for a spin-squeezed
//! atomic fountain clock.
//!
//! The crate models an optical-cavity-assisted experiment in which a cloud
//! of ~4e5 atoms is prepared in a squeezed collective-spin state, released
//! into free fall, interrogated with microwave pulses, and read out by
//! fluorescence imaging of the two hyperfine populations. The modules map
//! onto the stages of that experiment:
//!
//! * [`spin`] — Gaussian-moment collective-spin states and rotations
//! * [`measure`] — cavity (QND) and fluorescence measurement models
//! * [`sequence`] — shot-by-shot experiment sequencer
//! * [`analysis`] — post-selection, squeezing metrics, stability statistics
//! * [`config`], [`records`], [`report`] — configuration, record I/O, reports
//!
//! All randomness flows through per-shot ChaCha streams derived from a
//! single user seed, so identical configurations produce byte-identical
//! record files regardless of the host.

pub mod analysis;
pub mod config;
pub mod measure;
pub mod records;
pub mod report;
pub mod selftest;
pub mod sequence;
pub mod spin;
pub mod stats;

use thiserror::Error;

/// Hyperfine clock transition angular frequency, rad/s (2π × 6.834 GHz).
pub const OMEGA_0: f64 = 2.0 * std::f64::consts::PI * 6.834e9;

/// Hyperfine splitting used by the probe beatnote correction, Hz.
pub const HYPERFINE_SPLITTING_HZ: f64 = 3.417e9;

/// Cavity frequency shift per unit of collective spin, Hz per (ħ) spin unit.
pub const CAVITY_HZ_PER_SPIN: f64 = 6.25;

/// Half-width of the cavity's linear response expressed in spin units
/// (±1 kHz of cavity shift at [`CAVITY_HZ_PER_SPIN`]).
pub const CAVITY_LINEAR_RANGE_SPIN: f64 = 160.0;

/// Convert a variance ratio to decibels (power convention).
pub fn db_from_variance_ratio(ratio: f64) -> f64 {
    10.0 * ratio.log10()
}

/// Convert decibels to a variance ratio (power convention).
pub fn variance_ratio_from_db(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Convert an amplitude (standard-deviation) ratio to decibels.
pub fn db_from_amplitude_ratio(ratio: f64) -> f64 {
    20.0 * ratio.log10()
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("analysis error: {0}")]
    Analysis(String),
    #[error("record stream was truncated mid-write")]
    TruncatedRecords,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
