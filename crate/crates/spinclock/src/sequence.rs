//! Shot-by-shot experiment sequencer. Each shot draws from its own
//! deterministic RNG stream (stream id = shot index), so runs are exactly
//! reproducible for a given seed and shot ordering never depends on how
//! many shots precede it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analysis::post_select;
use crate::config::{ExperimentConfig, SequenceKind};
use crate::measure::{beatnote_shift, push_and_fluoresce};
use crate::records::{ShotFlags, ShotRecord};
use crate::spin::{
    calibrate_shear, composite_pi_half, composite_residual, oat_shear, rotate_about_mean,
    GaussianSpinState,
};
use crate::stats;
use crate::{variance_ratio_from_db, Error, Result, OMEGA_0};

/// RNG stream reserved for the slow local-oscillator drift series, kept out
/// of the per-shot stream space.
const LO_DRIFT_STREAM: u64 = u64::MAX;

pub fn shot_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Run-level preparation calibration: the shear strength and the resulting
/// variance ratios (relative to N/4) of the squeezed-state preparation.
/// Done once on the nominal atom number with the full Gaussian-moment
/// machinery; per shot only the ratios are needed, rescaled by that shot's
/// realized atom number.
#[derive(Clone, Copy, Debug)]
pub struct PrepCalibration {
    /// One-axis-twisting shear strength that reaches the pre-squeeze target.
    pub shear: f64,
    /// Jz variance ratio after shear + realignment (the probe's input).
    pub presqueezed_ratio: f64,
    /// Probe read-out variance ratio (resolution + thermal inhomogeneity).
    pub readout_ratio: f64,
    /// Gain of the feedback rotation applied after the preparation probe.
    pub feedback_weight: f64,
    /// Jz variance ratio after probe + feedback.
    pub prepared_ratio: f64,
    /// Contrast remaining after the preparation pulses and probe light.
    pub contrast_after_probe: f64,
}

pub fn calibrate_preparation(cfg: &ExperimentConfig) -> Result<PrepCalibration> {
    let n = cfg.n_atoms;
    let v = n / 4.0;
    let lower = GaussianSpinState::new_at_pole(n, cfg.css_contrast, false)?;
    let equator = composite_pi_half(&lower, 0.0)?;
    let target = variance_ratio_from_db(cfg.presqueeze_db) * v;
    let shear = calibrate_shear(&equator, cfg.realign_rad, target)?;
    let sheared = rotate_about_mean(&oat_shear(&equator, shear)?, cfg.realign_rad);
    let presqueezed_ratio = sheared.var_jz() / v;
    let m = cfg.qnd.measurement_variance(n) / v;
    let th = cfg.qnd.thermal_noise(n).powi(2) / v;
    let readout_ratio = m + th;
    let feedback_weight = presqueezed_ratio / (presqueezed_ratio + readout_ratio);
    let prepared_ratio =
        presqueezed_ratio * readout_ratio / (presqueezed_ratio + readout_ratio);
    Ok(PrepCalibration {
        shear,
        presqueezed_ratio,
        readout_ratio,
        feedback_weight,
        prepared_ratio,
        contrast_after_probe: cfg.css_contrast.min(cfg.qnd.contrast_after_qnd),
    })
}

/// Realized atom number of one shot (loading fluctuations).
fn draw_n_shot<R: Rng + ?Sized>(cfg: &ExperimentConfig, rng: &mut R) -> f64 {
    (cfg.n_atoms * (1.0 + stats::normal(rng, 0.0, cfg.atom_number_frac_sigma))).max(1.0)
}

/// True collective Jz after shear, preparation probe and feedback rotation.
fn prepared_jz<R: Rng + ?Sized>(cal: &PrepCalibration, v_shot: f64, rng: &mut R) -> f64 {
    let f0 = stats::normal(rng, 0.0, (cal.presqueezed_ratio * v_shot).sqrt());
    let e0 = stats::normal(rng, 0.0, (cal.readout_ratio * v_shot).sqrt());
    f0 - cal.feedback_weight * (f0 + e0)
}

/// Probe-laser beatnote offset of this cycle, uniform on ±the configured
/// spread (a slow lock drift, not Gaussian noise).
fn draw_beatnote<R: Rng + ?Sized>(cfg: &ExperimentConfig, rng: &mut R) -> f64 {
    let s = cfg.qnd.beatnote_sigma_hz;
    if s > 0.0 {
        rng.random_range(-s..=s)
    } else {
        0.0
    }
}

/// Slow fractional-frequency drift of the local oscillator: a first-order
/// autoregressive series with correlation time `stability_floor_tau_s` and
/// stationary deviation `stability_floor`, one value per cycle, drawn from
/// its own reserved stream.
pub fn local_oscillator_series(cfg: &ExperimentConfig, shots: u64) -> Vec<f64> {
    let mut rng = shot_rng(cfg.seed, LO_DRIFT_STREAM);
    let a = (-cfg.cycle_s / cfg.stability_floor_tau_s).exp();
    let s0 = cfg.stability_floor;
    let mut y = stats::normal(&mut rng, 0.0, s0);
    (0..shots)
        .map(|_| {
            let cur = y;
            y = a * y + stats::normal(&mut rng, 0.0, s0 * (1.0 - a * a).sqrt());
            cur
        })
        .collect()
}

/// Squeezing characterization: prepare the squeezed state, record two
/// successive cavity probes, drop, push and fluoresce. Records carry the
/// raw (beatnote-shifted) probe values plus the cycle's beatnote offset.
pub fn run_squeeze_characterization(cfg: &ExperimentConfig) -> Result<Vec<ShotRecord>> {
    cfg.validate()?;
    if cfg.sequence != SequenceKind::SqueezeChar {
        return Err(Error::Config(
            "run_squeeze_characterization requires sequence = squeeze_char".into(),
        ));
    }
    let cal = calibrate_preparation(cfg)?;
    let n = cfg.n_atoms;
    let mut records = Vec::with_capacity(cfg.shots as usize);
    for i in 0..cfg.shots {
        let mut rng = shot_rng(cfg.seed, i);
        let n_shot = draw_n_shot(cfg, &mut rng);
        let v_shot = n_shot / 4.0;
        let f = prepared_jz(&cal, v_shot, &mut rng);
        let delta = draw_beatnote(cfg, &mut rng);
        let shift = beatnote_shift(n, delta, &cfg.qnd);
        let sigma_e = (cal.readout_ratio * v_shot).sqrt();
        let q1 = f + stats::normal(&mut rng, 0.0, sigma_e) + shift;
        let q2 = f + stats::normal(&mut rng, 0.0, sigma_e) + shift;
        let fluor = push_and_fluoresce(f, n_shot, n, &cfg.fluor, &mut rng)?;
        records.push(ShotRecord {
            shot_index: i,
            t_s: i as f64 * cfg.cycle_s,
            qnd1_jz: Some(q1),
            qnd2_jz: Some(q2),
            fluor,
            delta_hz: delta,
            theta_true: None,
            flags: ShotFlags::default(),
        });
    }
    post_select(&mut records, cfg)?;
    Ok(records)
}

/// Clock operation: prepare (CSS or squeezed), composite-pulse Ramsey
/// interrogation at the configured offset angle, fluorescence readout. The
/// probe outcomes are consumed by the in-loop feedback and not used as a
/// readout reference, so the records carry no probe values.
pub fn run_clock(cfg: &ExperimentConfig) -> Result<Vec<ShotRecord>> {
    cfg.validate()?;
    let squeezed = match cfg.sequence {
        SequenceKind::ClockSqueezed => true,
        SequenceKind::ClockCss => false,
        _ => {
            return Err(Error::Config(
                "run_clock requires sequence = clock_css or clock_squeezed".into(),
            ))
        }
    };
    let cal = if squeezed {
        Some(calibrate_preparation(cfg)?)
    } else {
        None
    };
    let contrast = if squeezed {
        cfg.contrast_for_lattice()?
    } else {
        cfg.css_contrast
    };
    let n = cfg.n_atoms;
    let lo = local_oscillator_series(cfg, cfg.shots);
    let mw_phase_sigma = (variance_ratio_from_db(cfg.mw_phase_noise_db) / n).sqrt();
    let phase_per_y = OMEGA_0 * cfg.t_int_s();

    let mut records = Vec::with_capacity(cfg.shots as usize);
    for k in 0..cfg.shots {
        let mut rng = shot_rng(cfg.seed, k);
        let n_shot = draw_n_shot(cfg, &mut rng);
        let v_shot = n_shot / 4.0;
        let f = match &cal {
            Some(cal) => prepared_jz(cal, v_shot, &mut rng),
            None => stats::normal(&mut rng, 0.0, v_shot.sqrt()),
        };
        let mut phi = cfg.theta_offset_rad;
        phi += stats::normal(&mut rng, 0.0, mw_phase_sigma);
        phi += stats::normal(&mut rng, 0.0, cfg.clock_technical_phase_rad);
        // pulse-amplitude error: the composite pulse pair cancels it to
        // second order, so only the residual deviation angle leaks in
        let eps = stats::normal(&mut rng, 0.0, cfg.mw_amplitude_error_sigma);
        if eps != 0.0 {
            phi += composite_residual(n, eps)?.copysign(eps);
        }
        phi += phase_per_y * lo[k as usize];
        let jz_true = contrast * (n_shot / 2.0) * phi.sin() + f * phi.cos();
        let fluor = push_and_fluoresce(jz_true, n_shot, n, &cfg.fluor, &mut rng)?;
        records.push(ShotRecord {
            shot_index: k,
            t_s: k as f64 * cfg.cycle_s,
            qnd1_jz: None,
            qnd2_jz: None,
            fluor,
            delta_hz: 0.0,
            theta_true: Some(phi),
            flags: ShotFlags::default(),
        });
    }
    post_select(&mut records, cfg)?;
    Ok(records)
}

/// Dynamic-range scan: the squeeze-characterization shot with an extra tip
/// by a set angle between the last probe and the readout. Tipping exposes
/// the anti-squeezed quadrature through the Bloch-sphere curvature, which
/// enters as extra phase noise growing as |tan θ|.
pub fn run_dynamic_range(
    cfg: &ExperimentConfig,
    thetas: &[f64],
) -> Result<Vec<Vec<ShotRecord>>> {
    cfg.validate()?;
    if cfg.sequence != SequenceKind::DynamicRange {
        return Err(Error::Config(
            "run_dynamic_range requires sequence = dynamic_range".into(),
        ));
    }
    if thetas.is_empty() {
        return Err(Error::Config("dynamic range scan needs tip angles".into()));
    }
    let cal = calibrate_preparation(cfg)?;
    let contrast = cfg.contrast_for_lattice()?;
    let n = cfg.n_atoms;
    let gamma_sq = variance_ratio_from_db(cfg.qnd.antisqueeze_var_jy_db);
    let curvature = (gamma_sq - 1.0 / gamma_sq) / (2f64.sqrt() * n);

    let mut groups = Vec::with_capacity(thetas.len());
    for (j, &theta) in thetas.iter().enumerate() {
        if theta.abs() >= std::f64::consts::FRAC_PI_2 {
            return Err(Error::Config(format!("tip angle {theta} rad beyond ±π/2")));
        }
        let mut records = Vec::with_capacity(cfg.shots as usize);
        for s in 0..cfg.shots {
            let mut rng = shot_rng(cfg.seed, j as u64 * cfg.shots + s);
            let n_shot = draw_n_shot(cfg, &mut rng);
            let v_shot = n_shot / 4.0;
            let f = prepared_jz(&cal, v_shot, &mut rng);
            let delta = draw_beatnote(cfg, &mut rng);
            let shift = beatnote_shift(n, delta, &cfg.qnd);
            let sigma_e = (cal.readout_ratio * v_shot).sqrt();
            let q1 = f + stats::normal(&mut rng, 0.0, sigma_e) + shift;
            let q2 = f + stats::normal(&mut rng, 0.0, sigma_e) + shift;
            let mut phi = theta;
            phi += stats::normal(&mut rng, 0.0, cfg.clock_technical_phase_rad);
            phi += stats::normal(&mut rng, 0.0, curvature * theta.tan().abs());
            let jz_true = contrast * (n_shot / 2.0) * phi.sin() + f * phi.cos();
            let fluor = push_and_fluoresce(jz_true, n_shot, n, &cfg.fluor, &mut rng)?;
            records.push(ShotRecord {
                shot_index: s,
                t_s: s as f64 * cfg.cycle_s,
                qnd1_jz: Some(q1),
                qnd2_jz: Some(q2),
                fluor,
                delta_hz: delta,
                theta_true: Some(theta),
                flags: ShotFlags::default(),
            });
        }
        post_select(&mut records, cfg)?;
        groups.push(records);
    }
    Ok(groups)
}

/// Rabi contrast scan over drive pulse areas on the bare atomic sample.
/// Returns (pulse area, mean normalized Jz in units of N/2) pairs.
pub fn run_rabi_scan(cfg: &ExperimentConfig, areas: &[f64]) -> Result<Vec<(f64, f64)>> {
    cfg.validate()?;
    if cfg.sequence != SequenceKind::RabiScan {
        return Err(Error::Config("run_rabi_scan requires sequence = rabi_scan".into()));
    }
    if areas.is_empty() {
        return Err(Error::Config("rabi scan needs pulse areas".into()));
    }
    let n = cfg.n_atoms;
    let contrast = cfg.css_contrast;
    let mut scan = Vec::with_capacity(areas.len());
    for (j, &area) in areas.iter().enumerate() {
        let mut acc = 0.0;
        for s in 0..cfg.shots {
            let mut rng = shot_rng(cfg.seed, j as u64 * cfg.shots + s);
            let n_shot = draw_n_shot(cfg, &mut rng);
            let f = stats::normal(&mut rng, 0.0, (n_shot / 4.0).sqrt());
            let jz_true = (contrast * (n_shot / 2.0) * area.sin() + f * area.cos())
                .clamp(-n_shot / 2.0, n_shot / 2.0);
            let fluor = push_and_fluoresce(jz_true, n_shot, n, &cfg.fluor, &mut rng)?;
            acc += fluor.normalized_jz / (n / 2.0);
        }
        scan.push((area, acc / cfg.shots as f64));
    }
    Ok(scan)
}
