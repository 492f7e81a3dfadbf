//! Experiment configuration: JSON tree with strict unknown-key rejection,
//! physical defaults matching the reference apparatus, and validation.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::measure::{FluorConfig, QndConfig};
use crate::{Error, Result};

/// Which experimental cycle the sequencer runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceKind {
    SqueezeChar,
    ClockCss,
    ClockSqueezed,
    DynamicRange,
    RabiScan,
}

/// One row of the lattice-time → contrast lookup.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContrastEntry {
    pub lattice_ramp_ms: f64,
    pub contrast: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Mean atom number per shot.
    pub n_atoms: f64,
    /// Lattice release ramp, ms (0.2 = sudden, 7.0 = adiabatic).
    pub lattice_ramp_ms: f64,
    /// Free-fall time between release and readout, ms.
    pub free_fall_ms: f64,
    /// Ramsey interrogation time T_int, ms.
    pub ramsey_ms: f64,
    /// Experimental cycle time T_c, s.
    pub cycle_s: f64,
    /// Deliberate tip angle θ of the clock state above the equator, rad.
    pub theta_offset_rad: f64,
    /// Microwave local-oscillator phase noise, dB vs the 1/N phase QPN.
    pub mw_phase_noise_db: f64,
    /// Shot-to-shot fractional pulse-amplitude error (std dev).
    pub mw_amplitude_error_sigma: f64,
    /// Extra technical phase noise of the clock sequence, rad (std dev).
    pub clock_technical_phase_rad: f64,
    /// Magnetic/environmental stability floor, fractional frequency
    /// (std dev of the slow offset; 0 disables).
    pub stability_floor: f64,
    /// Correlation time of the stability-floor offset, s.
    pub stability_floor_tau_s: f64,
    /// Shot-to-shot fractional atom-number fluctuation (std dev).
    pub atom_number_frac_sigma: f64,
    /// Contrast of the initial optically-pumped state.
    pub css_contrast: f64,
    /// Cavity-feedback pre-squeezing level, dB vs N/4.
    pub presqueeze_db: f64,
    /// Ellipse realignment rotation after the twisting shear, rad.
    pub realign_rad: f64,
    /// Shots per run (per θ point for dynamic_range, per pulse area for
    /// rabi_scan).
    pub shots: u64,
    pub seed: u64,
    pub sequence: SequenceKind,
    pub qnd: QndConfig,
    pub fluor: FluorConfig,
    /// Lattice ramp time → contrast after free fall.
    pub contrast_table: Vec<ContrastEntry>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n_atoms: 390_000.0,
            lattice_ramp_ms: 0.2,
            free_fall_ms: 4.0,
            ramsey_ms: 3.6,
            cycle_s: 1.0,
            theta_offset_rad: 0.0,
            mw_phase_noise_db: -10.0,
            mw_amplitude_error_sigma: 0.005,
            clock_technical_phase_rad: 590.0e-6,
            stability_floor: 4.0e-12,
            stability_floor_tau_s: 500.0,
            atom_number_frac_sigma: 0.02,
            css_contrast: 0.98,
            presqueeze_db: -6.0,
            realign_rad: std::f64::consts::PI / 12.0,
            shots: 10_000,
            seed: 1,
            sequence: SequenceKind::SqueezeChar,
            qnd: QndConfig::default(),
            fluor: FluorConfig::default(),
            contrast_table: vec![
                ContrastEntry { lattice_ramp_ms: 0.2, contrast: 0.91 },
                ContrastEntry { lattice_ramp_ms: 7.0, contrast: 0.735 },
            ],
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.n_atoms >= 1.0) {
            return Err(Error::Config("n_atoms must be >= 1".into()));
        }
        for (name, v) in [
            ("lattice_ramp_ms", self.lattice_ramp_ms),
            ("free_fall_ms", self.free_fall_ms),
            ("ramsey_ms", self.ramsey_ms),
            ("cycle_s", self.cycle_s),
        ] {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        // camera field of view limits the usable fall time
        let max_fall = if self.lattice_ramp_ms <= 1.0 { 4.0 } else { 8.0 };
        if self.free_fall_ms > max_fall + 1e-9 {
            return Err(Error::Config(format!(
                "free_fall_ms = {} exceeds the {} ms field-of-view limit for a {} ms lattice ramp",
                self.free_fall_ms, max_fall, self.lattice_ramp_ms
            )));
        }
        if self.theta_offset_rad.abs() >= std::f64::consts::FRAC_PI_2 {
            return Err(Error::Config("theta_offset_rad must satisfy |θ| < π/2".into()));
        }
        if !(self.mw_amplitude_error_sigma >= 0.0) {
            return Err(Error::Config("mw_amplitude_error_sigma must be >= 0".into()));
        }
        if !(self.clock_technical_phase_rad >= 0.0) {
            return Err(Error::Config("clock_technical_phase_rad must be >= 0".into()));
        }
        if !(self.stability_floor >= 0.0) {
            return Err(Error::Config("stability_floor must be >= 0".into()));
        }
        if !(self.stability_floor_tau_s > 0.0) {
            return Err(Error::Config("stability_floor_tau_s must be positive".into()));
        }
        if !(self.atom_number_frac_sigma >= 0.0 && self.atom_number_frac_sigma < 0.3) {
            return Err(Error::Config("atom_number_frac_sigma must be in [0, 0.3)".into()));
        }
        if !(0.0 < self.css_contrast && self.css_contrast <= 1.0) {
            return Err(Error::Config("css_contrast must be in (0, 1]".into()));
        }
        if !(self.presqueeze_db < 0.0) {
            return Err(Error::Config("presqueeze_db must be negative".into()));
        }
        if self.contrast_table.is_empty() {
            return Err(Error::Config("contrast_table must not be empty".into()));
        }
        for e in &self.contrast_table {
            if !(0.0 < e.contrast && e.contrast <= 1.0) {
                return Err(Error::Config("contrast_table entries must be in (0, 1]".into()));
            }
        }
        self.contrast_for_lattice()?;
        self.qnd.validate()?;
        self.fluor.validate()?;
        Ok(())
    }

    /// Post-free-fall contrast for the configured lattice ramp.
    pub fn contrast_for_lattice(&self) -> Result<f64> {
        self.contrast_table
            .iter()
            .find(|e| (e.lattice_ramp_ms - self.lattice_ramp_ms).abs() < 1e-9)
            .map(|e| e.contrast)
            .ok_or_else(|| {
                Error::Config(format!(
                    "no contrast_table entry for lattice_ramp_ms = {}",
                    self.lattice_ramp_ms
                ))
            })
    }

    /// Ramsey interrogation time in seconds.
    pub fn t_int_s(&self) -> f64 {
        self.ramsey_ms * 1e-3
    }

    /// Parse from a JSON string; empty input yields the full defaults.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let trimmed = text.trim();
        let cfg: ExperimentConfig = if trimmed.is_empty() {
            ExperimentConfig::default()
        } else {
            serde_json::from_str(trimmed)
                .map_err(|e| Error::Config(format!("config parse error: {e}")))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical (re-serialized) form, so the hash is stable
    /// under key reordering or formatting differences in the source file.
    pub fn hash_hex(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    ExperimentConfig::from_json_str(&text)
}
