//! Measurement models: the dispersive cavity (QND) probe of Jz and the
//! push-apart fluorescence readout of the two clock-level populations.
//!
//! The cavity probe is a Gaussian conditional update. Its resolution is not
//! configured directly: the probe strength is calibrated so that measuring
//! the pre-squeezed input (−6 dB by default) conditions the state down to
//! the configured prepared target (−14 dB), which is how the instrument
//! itself is tuned.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::spin::GaussianSpinState;
use crate::stats;
use crate::{variance_ratio_from_db, Error, Result};

/// Cavity probe configuration.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QndConfig {
    /// Conditional Jz variance target after one probe, dB vs N/4.
    pub prepared_var_jz_db: f64,
    /// Anti-squeezed conjugate quadrature after the probe, dB vs N/4.
    pub antisqueeze_var_jy_db: f64,
    /// Half-width of the linear cavity response, spin units (±1 kHz shift).
    pub linear_range_jz: f64,
    /// Cavity shift per unit Jz, Hz.
    pub cal_hz_per_jz: f64,
    /// Mean probe-to-transition detuning Δ, Hz.
    pub mean_detuning_hz: f64,
    /// Shot-to-shot probe beatnote spread δ, Hz (uniform on ±this value).
    pub beatnote_sigma_hz: f64,
    /// Thermal mode-overlap inhomogeneity β².
    pub thermal_beta_sq: f64,
    /// Contrast remaining after the probe light scattering.
    pub contrast_after_qnd: f64,
    /// Prior variance assumed by the probe-strength calibration, dB vs N/4
    /// (the pre-squeezed input the instrument is tuned against).
    pub probe_calibration_prior_db: f64,
}

impl Default for QndConfig {
    fn default() -> Self {
        QndConfig {
            prepared_var_jz_db: -14.0,
            antisqueeze_var_jy_db: 36.0,
            linear_range_jz: crate::CAVITY_LINEAR_RANGE_SPIN,
            cal_hz_per_jz: crate::CAVITY_HZ_PER_SPIN,
            mean_detuning_hz: crate::HYPERFINE_SPLITTING_HZ,
            beatnote_sigma_hz: 3.0e6,
            thermal_beta_sq: 0.076,
            contrast_after_qnd: 0.91,
            probe_calibration_prior_db: -6.0,
        }
    }
}

impl QndConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.linear_range_jz > 0.0) {
            return Err(Error::Config("qnd.linear_range_jz must be positive".into()));
        }
        if !(self.mean_detuning_hz > 100.0 * self.beatnote_sigma_hz.abs()) {
            return Err(Error::Config(
                "qnd.mean_detuning_hz must dominate the beatnote spread".into(),
            ));
        }
        if !(0.0 < self.thermal_beta_sq && self.thermal_beta_sq < 1.0) {
            return Err(Error::Config("qnd.thermal_beta_sq must be in (0, 1)".into()));
        }
        if !(0.0 < self.contrast_after_qnd && self.contrast_after_qnd <= 1.0) {
            return Err(Error::Config("qnd.contrast_after_qnd must be in (0, 1]".into()));
        }
        if self.prepared_var_jz_db >= self.probe_calibration_prior_db {
            return Err(Error::Config(
                "qnd.prepared_var_jz_db must lie below the calibration prior".into(),
            ));
        }
        Ok(())
    }

    /// Probe read-out variance (spin² units) for atom number `n`, from the
    /// calibration prior → prepared target inversion.
    pub fn measurement_variance(&self, n: f64) -> f64 {
        let v = n / 4.0;
        let prior = variance_ratio_from_db(self.probe_calibration_prior_db) * v;
        let target = variance_ratio_from_db(self.prepared_var_jz_db) * v;
        resolution_variance_for_target(prior, target).expect("validated config")
    }

    /// Thermal inhomogeneity noise of one probe, spin units (std dev).
    pub fn thermal_noise(&self, n: f64) -> f64 {
        thermal_inhomogeneity_noise(n, self.thermal_beta_sq)
    }
}

/// Measurement variance a Gaussian update needs to condition `prior_var`
/// down to `target_var`: 1 / (1/target − 1/prior).
pub fn resolution_variance_for_target(prior_var: f64, target_var: f64) -> Result<f64> {
    if !(target_var > 0.0 && target_var < prior_var) {
        return Err(Error::Invalid(format!(
            "target variance {target_var} must be in (0, prior {prior_var})"
        )));
    }
    Ok(1.0 / (1.0 / target_var - 1.0 / prior_var))
}

/// Thermal mode-overlap noise std: √N·β²/√(1 + 2β²), spin units. Applies to
/// cavity probe outcomes only; the fluorescence readout does not see it.
pub fn thermal_inhomogeneity_noise(n: f64, beta_sq: f64) -> f64 {
    n.sqrt() * beta_sq / (1.0 + 2.0 * beta_sq).sqrt()
}

/// One cavity probe of Jz: returns the sampled outcome (including probe
/// resolution and thermal inhomogeneity noise) and the conditioned state.
pub fn qnd_measure<R: Rng + ?Sized>(
    state: &GaussianSpinState,
    cfg: &QndConfig,
    rng: &mut R,
) -> (f64, GaussianSpinState) {
    let n = state.n_atoms();
    let v = n / 4.0;
    let th = cfg.thermal_noise(n);
    let r_var = cfg.measurement_variance(n) + th * th;
    let p_var = state.var_jz();
    let mu = state.mean_jz();
    let outcome = stats::normal(rng, mu, (p_var + r_var).sqrt());
    let gain = p_var / (p_var + r_var);
    let post_mean = mu + gain * (outcome - mu);
    let post_var = (1.0 - gain) * p_var;
    let anti = variance_ratio_from_db(cfg.antisqueeze_var_jy_db) * v;
    let mut post = *state;
    post.set_conditioned(
        post_mean,
        post_var,
        state.var_jy().max(anti),
        state.contrast().min(cfg.contrast_after_qnd),
    );
    (outcome, post)
}

/// Remove the linearized probe-detuning systematic from a measured Jz:
/// inferred = measured + N·δ/(2Δ).
pub fn beatnote_correct(measured_jz: f64, n: f64, delta_hz: f64, cfg: &QndConfig) -> Result<f64> {
    let rel = delta_hz / cfg.mean_detuning_hz;
    if rel.abs() > 0.01 {
        return Err(Error::Invalid(format!(
            "beatnote offset {delta_hz} Hz outside the linearized range"
        )));
    }
    Ok(measured_jz + 0.5 * n * rel)
}

/// Jz shift a probe detuned by δ imprints on the raw measurement (the
/// quantity `beatnote_correct` undoes).
pub fn beatnote_shift(n: f64, delta_hz: f64, cfg: &QndConfig) -> f64 {
    -0.5 * n * delta_hz / cfg.mean_detuning_hz
}

/// Fluorescence readout configuration.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FluorConfig {
    /// Detected photons per atom, α.
    pub photons_per_atom: f64,
    /// Background scale ΔX in photon counts; the per-shot backgrounds are
    /// drawn so the inferred-Jz background noise is exactly ΔX/α.
    pub background_sigma_photons: f64,
    /// Correlation of the two clouds' backgrounds (simultaneous imaging).
    pub background_correlation: f64,
    /// Pushed-cloud centre jitter, mm.
    pub position_sigma_mm: f64,
    /// Collection-efficiency slope of the pushed cloud, fraction per mm.
    pub position_efficiency_slope: f64,
    /// Catch-all technical noise on inferred Jz, dB vs N/4.
    pub unidentified_noise_db: f64,
}

impl Default for FluorConfig {
    fn default() -> Self {
        // ΔX tuned so the background term sits at −14 dB vs QPN for 390k
        // atoms: ΔX = α·√(10^(−1.4)·N/4) ≈ 4.05e3 photon counts.
        let alpha = 65.0;
        let dx = alpha * (variance_ratio_from_db(-14.0) * 390_000.0 / 4.0).sqrt();
        FluorConfig {
            photons_per_atom: alpha,
            background_sigma_photons: dx,
            background_correlation: 0.5,
            position_sigma_mm: 0.17,
            position_efficiency_slope: 0.05,
            unidentified_noise_db: -11.0,
        }
    }
}

impl FluorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.photons_per_atom > 0.0) {
            return Err(Error::Config("fluor.photons_per_atom must be positive".into()));
        }
        if !(self.background_sigma_photons >= 0.0) {
            return Err(Error::Config("fluor.background_sigma_photons must be >= 0".into()));
        }
        if !(-1.0..1.0).contains(&self.background_correlation) {
            return Err(Error::Config(
                "fluor.background_correlation must be in [-1, 1)".into(),
            ));
        }
        if !(self.position_sigma_mm >= 0.0) {
            return Err(Error::Config("fluor.position_sigma_mm must be >= 0".into()));
        }
        Ok(())
    }

    /// Photon shot-noise term on inferred Jz: (1/√α)·(√N/2), spin units.
    pub fn photon_shot_noise(&self, n: f64) -> f64 {
        (n / self.photons_per_atom).sqrt() / 2.0
    }

    /// Background term on inferred Jz: ΔX/α, spin units.
    pub fn background_noise(&self) -> f64 {
        self.background_sigma_photons / self.photons_per_atom
    }
}

/// Raw outputs of one fluorescence readout. Counts are background-subtracted
/// signed values (the subtraction of two exposures can go negative).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FluorOutcome {
    pub counts_up: f64,
    pub counts_down: f64,
    pub pushed_position_mm: f64,
    pub normalized_jz: f64,
}

/// Normalized population difference from photon counts:
/// J'z = (N̄/2)·(N↑ − N↓)/(N↑ + N↓), with counts converted to atom-number
/// estimates through α (the conversion cancels in the ratio but keeps the
/// intermediate quantities physical).
pub fn normalized_jz(counts_up: f64, counts_down: f64, mean_n: f64, alpha: f64) -> Result<f64> {
    let up = counts_up / alpha;
    let down = counts_down / alpha;
    let total = up + down;
    if !(total > 0.0) {
        return Err(Error::Invalid("non-positive total fluorescence signal".into()));
    }
    Ok(mean_n / 2.0 * (up - down) / total)
}

/// Push the clouds apart and count fluorescence photons from each.
/// `jz_true` is the realized collective Jz of this shot's `n` atoms;
/// `mean_n` is the data-set mean atom number used for normalization.
pub fn push_and_fluoresce<R: Rng + ?Sized>(
    jz_true: f64,
    n: f64,
    mean_n: f64,
    cfg: &FluorConfig,
    rng: &mut R,
) -> Result<FluorOutcome> {
    if jz_true.abs() > n / 2.0 {
        return Err(Error::Invalid(format!(
            "jz = {jz_true} outside ±n/2 for n = {n}"
        )));
    }
    let alpha = cfg.photons_per_atom;
    let n_up = n / 2.0 + jz_true;
    let n_down = n / 2.0 - jz_true;

    let pos = stats::normal(rng, 0.0, cfg.position_sigma_mm);
    let eff_up = 1.0 + cfg.position_efficiency_slope * pos;

    let sig_up = alpha * n_up * eff_up;
    let sig_down = alpha * n_down;
    // Poisson photon shot noise in the Gaussian limit (counts >> 1)
    let mut counts_up = sig_up + stats::normal(rng, 0.0, sig_up.max(0.0).sqrt());
    let mut counts_down = sig_down + stats::normal(rng, 0.0, sig_down.max(0.0).sqrt());

    // correlated residual backgrounds after exposure subtraction
    let rho = cfg.background_correlation;
    let sigma_x = cfg.background_sigma_photons * (2.0 / (1.0 - rho)).sqrt();
    let z1 = stats::standard_normal(rng);
    let z2 = stats::standard_normal(rng);
    counts_up += sigma_x * z1;
    counts_down += sigma_x * (rho * z1 + (1.0 - rho * rho).sqrt() * z2);

    // unidentified technical noise, injected at the count level so the
    // normalized estimate can still be recomputed from the stored counts
    let unid =
        (variance_ratio_from_db(cfg.unidentified_noise_db) * mean_n / 4.0).sqrt();
    let du = stats::normal(rng, 0.0, unid);
    counts_up += alpha * du;
    counts_down -= alpha * du;

    let jz = normalized_jz(counts_up, counts_down, mean_n, alpha).unwrap_or(0.0);
    Ok(FluorOutcome {
        counts_up,
        counts_down,
        pushed_position_mm: pos,
        normalized_jz: jz,
    })
}

/// Linear collection-efficiency model fitted from calibration shots.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PositionFit {
    pub slope_per_mm: f64,
    pub intercept: f64,
    pub span_mm: f64,
}

/// Fit the pushed/static count ratio against pushed-cloud position over a
/// calibration ensemble (states prepared on the equator, so the true ratio
/// carries no Jz signal on average).
pub fn fit_position_efficiency(outcomes: &[FluorOutcome]) -> Result<PositionFit> {
    if outcomes.len() < 2 {
        return Err(Error::Analysis("position fit needs >= 2 shots".into()));
    }
    let xs: Vec<f64> = outcomes.iter().map(|o| o.pushed_position_mm).collect();
    let ys: Vec<f64> = outcomes
        .iter()
        .map(|o| o.counts_up / o.counts_down)
        .collect();
    let (slope, intercept) = stats::linear_fit(&xs, &ys)?;
    let span = xs.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    Ok(PositionFit {
        slope_per_mm: slope,
        intercept,
        span_mm: span,
    })
}

/// Divide the pushed-cloud counts by the fitted relative efficiency at this
/// shot's position and recompute the normalized Jz. Positions beyond twice
/// the calibrated span are rejected rather than extrapolated.
pub fn position_correction(
    outcome: &FluorOutcome,
    fit: &PositionFit,
    mean_n: f64,
    alpha: f64,
) -> Result<FluorOutcome> {
    if outcome.pushed_position_mm.abs() > 2.0 * fit.span_mm {
        return Err(Error::Invalid(format!(
            "position {} mm outside 2x calibrated span {} mm",
            outcome.pushed_position_mm, fit.span_mm
        )));
    }
    let rel_eff = (fit.intercept + fit.slope_per_mm * outcome.pushed_position_mm) / fit.intercept;
    if !(rel_eff > 0.0) {
        return Err(Error::Invalid("non-positive fitted efficiency".into()));
    }
    let counts_up = outcome.counts_up / rel_eff;
    let jz = normalized_jz(counts_up, outcome.counts_down, mean_n, alpha)?;
    Ok(FluorOutcome {
        counts_up,
        counts_down: outcome.counts_down,
        pushed_position_mm: outcome.pushed_position_mm,
        normalized_jz: jz,
    })
}
