//! Estimators and statistics: post-selection, squeezing metrics, gap-aware
//! Allan deviation, chi-square confidence intervals, pooled deviation, Rabi
//! and dynamic-range fits, and the noise budget.

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, SequenceKind};
use crate::measure::{
    beatnote_correct, fit_position_efficiency, position_correction, FluorOutcome, QndConfig,
};
use crate::records::ShotRecord;
use crate::stats;
use crate::{
    db_from_amplitude_ratio, db_from_variance_ratio, variance_ratio_from_db, Error, Result,
    OMEGA_0,
};

/// Thermal contribution carried in the noise budget, dB vs QPN. This is the
/// empirically calibrated level of the apparatus table; the first-principles
/// formula used for the per-shot injection evaluates about 1 dB lower
/// (−17.0 dB at β² = 0.076).
pub const THERMAL_BUDGET_DB: f64 = -16.0;

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct RemovalReport {
    pub total: usize,
    pub kept: usize,
    pub qnd_out_of_range: usize,
    pub fluor_failed: usize,
    pub clock_outlier: usize,
}

impl RemovalReport {
    pub fn removed_fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            (self.total - self.kept) as f64 / self.total as f64
        }
    }
}

/// Flag shots outside the cavity's linear response (on the
/// beatnote-corrected first probe), failed fluorescence readouts, and — for
/// clock sequences — outliers beyond 6·√N/2 from the ensemble mean. Flags
/// are set, never deleted, so the time axis keeps its gaps. The outlier cut
/// iterates to a fixed point, which makes the whole pass idempotent.
pub fn post_select(records: &mut [ShotRecord], cfg: &ExperimentConfig) -> Result<RemovalReport> {
    if records.is_empty() {
        return Err(Error::Analysis("post_select on empty record set".into()));
    }
    let n = cfg.n_atoms;
    for r in records.iter_mut() {
        r.flags.fluor_failed = !(r.fluor.counts_up + r.fluor.counts_down > 0.0);
        r.flags.qnd_out_of_range = match r.qnd1_jz {
            Some(q1) => match beatnote_correct(q1, n, r.delta_hz, &cfg.qnd) {
                Ok(corrected) => corrected.abs() > cfg.qnd.linear_range_jz,
                Err(_) => true, // beatnote outside the linearized range
            },
            None => false,
        };
        r.flags.clock_outlier = false;
    }

    let clock = matches!(
        cfg.sequence,
        SequenceKind::ClockCss | SequenceKind::ClockSqueezed
    );
    if clock {
        let bound = 6.0 * n.sqrt() / 2.0;
        // fixed-point iteration: the mean is always taken over currently
        // unflagged shots, so re-running on the kept set changes nothing
        for _ in 0..100 {
            let kept: Vec<f64> = records
                .iter()
                .filter(|r| !r.flags.any())
                .map(|r| r.fluor.normalized_jz)
                .collect();
            if kept.is_empty() {
                break;
            }
            let m = stats::mean(&kept);
            let mut changed = false;
            for r in records.iter_mut() {
                if r.flags.fluor_failed || r.flags.qnd_out_of_range {
                    continue;
                }
                let out = (r.fluor.normalized_jz - m).abs() > bound;
                if out != r.flags.clock_outlier {
                    r.flags.clock_outlier = out;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
    }

    let mut report = RemovalReport { total: records.len(), ..Default::default() };
    for r in records.iter() {
        if r.flags.qnd_out_of_range {
            report.qnd_out_of_range += 1;
        }
        if r.flags.fluor_failed {
            report.fluor_failed += 1;
        }
        if r.flags.clock_outlier {
            report.clock_outlier += 1;
        }
        if !r.flags.any() {
            report.kept += 1;
        }
    }
    Ok(report)
}

pub fn kept<'a>(records: &'a [ShotRecord]) -> impl Iterator<Item = &'a ShotRecord> {
    records.iter().filter(|r| !r.flags.any())
}

/// The two-measurement observable of one shot: the fluorescence Jz minus
/// the (beatnote-corrected) last cavity probe when one was recorded, or the
/// fluorescence value alone for probe-free sequences.
pub fn jz_two_measurement(record: &ShotRecord, n: f64, qnd: &QndConfig) -> Result<f64> {
    let reference = match (record.qnd2_jz, record.qnd1_jz) {
        (Some(q2), _) => Some(beatnote_correct(q2, n, record.delta_hz, qnd)?),
        (None, Some(q1)) => Some(beatnote_correct(q1, n, record.delta_hz, qnd)?),
        (None, None) => None,
    };
    Ok(record.fluor.normalized_jz - reference.unwrap_or(0.0))
}

/// Two-measurement series aligned with the record stream (None where a shot
/// is flagged), with the pushed-cloud collection-efficiency correction
/// applied when the data set carries position spread to calibrate it from.
pub fn two_measurement_series(
    records: &[ShotRecord],
    cfg: &ExperimentConfig,
) -> Result<Vec<Option<f64>>> {
    let outcomes: Vec<FluorOutcome> = kept(records).map(|r| r.fluor).collect();
    let span = outcomes
        .iter()
        .fold(0.0f64, |m, o| m.max(o.pushed_position_mm.abs()));
    let pos_fit = if span > 1e-9 && outcomes.len() >= 2 {
        Some(fit_position_efficiency(&outcomes)?)
    } else {
        None
    };
    let n = cfg.n_atoms;
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        if r.flags.any() {
            out.push(None);
            continue;
        }
        let fluor = match &pos_fit {
            Some(fit) => position_correction(&r.fluor, fit, n, cfg.fluor.photons_per_atom)?,
            None => r.fluor,
        };
        let reference = match (r.qnd2_jz, r.qnd1_jz) {
            (Some(q2), _) => beatnote_correct(q2, n, r.delta_hz, &cfg.qnd)?,
            (None, Some(q1)) => beatnote_correct(q1, n, r.delta_hz, &cfg.qnd)?,
            (None, None) => 0.0,
        };
        out.push(Some(fluor.normalized_jz - reference));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SqueezingMetrics {
    /// Variance reduction Ξ² = var(Jz)/(N/4), dB.
    pub variance_reduction_db: f64,
    /// Metrological squeezing ξ² = Ξ²/C², dB.
    pub wineland_db: f64,
    /// Angular resolution Δθ = ΔJz/(C·N/2), rad.
    pub phase_resolution_rad: f64,
    pub shots_used: usize,
}

pub fn squeezing_metrics(
    records: &[ShotRecord],
    cfg: &ExperimentConfig,
    contrast: f64,
) -> Result<SqueezingMetrics> {
    if !(0.0 < contrast && contrast <= 1.0) {
        return Err(Error::Analysis("contrast must be in (0, 1]".into()));
    }
    let n = cfg.n_atoms;
    let xs: Vec<f64> = two_measurement_series(records, cfg)?
        .into_iter()
        .flatten()
        .collect();
    if xs.len() < 2 {
        return Err(Error::Analysis("squeezing_metrics needs >= 2 kept shots".into()));
    }
    let var = stats::sample_variance(&xs);
    let variance_reduction_db = db_from_variance_ratio(var / (n / 4.0));
    let wineland_db = variance_reduction_db - db_from_amplitude_ratio(contrast);
    Ok(SqueezingMetrics {
        variance_reduction_db,
        wineland_db,
        phase_resolution_rad: var.sqrt() / (contrast * n / 2.0),
        shots_used: xs.len(),
    })
}

/// Quantum-projection-noise limit of the fractional frequency stability:
/// 1/(ω₀·T_int)·√(T_c/(N·τ)).
pub fn qpn_stability(t_int_s: f64, t_c_s: f64, n: f64, tau_s: f64) -> f64 {
    1.0 / (OMEGA_0 * t_int_s) * (t_c_s / (n * tau_s)).sqrt()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StabilityCurve {
    pub taus_s: Vec<f64>,
    pub sigma_y: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
    pub n_pairs_used: Vec<usize>,
}

/// Two-sample (Allan) deviation of the clock record stream with gap
/// handling: each τ bin averages only the kept shots it contains, bins with
/// no kept shots are dropped together with the adjacent-difference pairs
/// that would touch them, and the pair average renormalizes by the count of
/// retained pairs.
pub fn allan_deviation(
    records: &[ShotRecord],
    cfg: &ExperimentConfig,
    contrast: f64,
    taus_s: &[f64],
    confidence: f64,
) -> Result<StabilityCurve> {
    if records.is_empty() {
        return Err(Error::Analysis("allan_deviation on empty record set".into()));
    }
    let n = cfg.n_atoms;
    let t_int_s = cfg.t_int_s();
    let t_c_s = cfg.cycle_s;
    // per-shot fractional frequency estimate
    let ys: Vec<Option<f64>> = two_measurement_series(records, cfg)?
        .into_iter()
        .map(|jz| jz.map(|v| v / (contrast * n / 2.0) / (OMEGA_0 * t_int_s)))
        .collect();
    let total_t = records.len() as f64 * t_c_s;

    let mut curve = StabilityCurve {
        taus_s: Vec::new(),
        sigma_y: Vec::new(),
        ci_low: Vec::new(),
        ci_high: Vec::new(),
        n_pairs_used: Vec::new(),
    };
    for &tau in taus_s {
        let l = (tau / t_c_s).round();
        if (tau / t_c_s - l).abs() > 1e-9 || l < 1.0 {
            return Err(Error::Analysis(format!(
                "tau = {tau} s is not a multiple of the cycle time {t_c_s} s"
            )));
        }
        if tau > total_t / 2.0 {
            return Err(Error::Analysis(format!(
                "tau = {tau} s exceeds half the record span {total_t} s"
            )));
        }
        let l = l as usize;
        let m = records.len() / l;
        let mut bin_means: Vec<Option<f64>> = Vec::with_capacity(m);
        for k in 0..m {
            let slice = &ys[k * l..(k + 1) * l];
            let kept: Vec<f64> = slice.iter().filter_map(|y| *y).collect();
            if kept.is_empty() {
                bin_means.push(None);
            } else {
                bin_means.push(Some(stats::mean(&kept)));
            }
        }
        let mut sum = 0.0;
        let mut pairs = 0usize;
        for w in bin_means.windows(2) {
            if let (Some(a), Some(b)) = (w[0], w[1]) {
                sum += (b - a) * (b - a);
                pairs += 1;
            }
        }
        if pairs == 0 {
            return Err(Error::Analysis(format!("no usable bin pairs at tau = {tau} s")));
        }
        let sigma = (sum / (2.0 * pairs as f64)).sqrt();
        let (lo, hi) = chi2_interval(sigma, pairs + 1, confidence)?;
        curve.taus_s.push(tau);
        curve.sigma_y.push(sigma);
        curve.ci_low.push(lo);
        curve.ci_high.push(hi);
        curve.n_pairs_used.push(pairs);
    }
    Ok(curve)
}

/// Chi-square confidence interval on a standard deviation estimated from
/// `n_samples` values: [√((n−1)s²/χ²_{(1+m)/2}), √((n−1)s²/χ²_{(1−m)/2})]
/// with n−1 degrees of freedom.
pub fn chi2_interval(std: f64, n_samples: usize, m: f64) -> Result<(f64, f64)> {
    if n_samples < 2 {
        return Err(Error::Analysis("chi2_interval needs n >= 2".into()));
    }
    if !(0.0 < m && m < 1.0) {
        return Err(Error::Analysis("confidence must be in (0, 1)".into()));
    }
    let dof = (n_samples - 1) as f64;
    let hi_q = stats::chi2_quantile(dof, (1.0 + m) / 2.0)?;
    let lo_q = stats::chi2_quantile(dof, (1.0 - m) / 2.0)?;
    Ok((
        (dof * std * std / hi_q).sqrt(),
        (dof * std * std / lo_q).sqrt(),
    ))
}

/// Pooled deviation across data sets, weights nᵢ − 1. Note this pools the
/// first-power deviations, not the variances; that is the convention the
/// rest of the pipeline's ensemble numbers are built on, statistical
/// oddity and all.
pub fn pooled_std(stds: &[f64], ns: &[usize]) -> Result<f64> {
    if stds.len() != ns.len() || stds.is_empty() {
        return Err(Error::Analysis("pooled_std needs matching non-empty lists".into()));
    }
    if ns.iter().any(|&n| n < 2) {
        return Err(Error::Analysis("pooled_std needs n >= 2 per set".into()));
    }
    let num: f64 = stds
        .iter()
        .zip(ns)
        .map(|(s, &n)| (n as f64 - 1.0) * s)
        .sum();
    let den: f64 = ns.iter().map(|&n| n as f64 - 1.0).sum();
    Ok(num / den)
}

/// Least-squares sinusoid a·sin + b·cos + offset over (pulse area, mean
/// normalized Jz / (N/2)) pairs; the fitted contrast is the amplitude
/// √(a² + b²). Returns (contrast, rms residual).
pub fn fit_rabi(scan: &[(f64, f64)]) -> Result<(f64, f64)> {
    if scan.len() < 4 {
        return Err(Error::Analysis("fit_rabi needs >= 4 points".into()));
    }
    let span = scan.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max)
        - scan.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    if span < 2.0 * std::f64::consts::PI {
        return Err(Error::Analysis("fit_rabi needs a full oscillation of pulse areas".into()));
    }
    // normal equations for the three linear coefficients
    let mut a = [[0.0f64; 3]; 3];
    let mut b = [0.0f64; 3];
    for &(x, y) in scan {
        let basis = [x.sin(), x.cos(), 1.0];
        for i in 0..3 {
            for j in 0..3 {
                a[i][j] += basis[i] * basis[j];
            }
            b[i] += basis[i] * y;
        }
    }
    let coef = solve3(a, b)
        .ok_or_else(|| Error::Analysis("fit_rabi normal equations are singular".into()))?;
    let amplitude = (coef[0] * coef[0] + coef[1] * coef[1]).sqrt();
    let rss: f64 = scan
        .iter()
        .map(|&(x, y)| {
            let f = coef[0] * x.sin() + coef[1] * x.cos() + coef[2];
            (y - f) * (y - f)
        })
        .sum();
    Ok((amplitude, (rss / scan.len() as f64).sqrt()))
}

fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in (col + 1)..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let mut s = b[row];
        for k in (row + 1)..3 {
            s -= a[row][k] * x[k];
        }
        x[row] = s / a[row][row];
    }
    Some(x)
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DynamicRangeFit {
    /// Squeezing parameter held fixed in the fit (linear, not dB).
    pub xi_sq: f64,
    /// Fitted anti-squeezing Γ² (linear, not dB).
    pub gamma_sq: f64,
    /// Fixed technical phase noise ΔX₀, rad.
    pub delta_x0_rad: f64,
    /// RMS residual of the fitted Δθ curve, rad.
    pub residual_norm_rad: f64,
}

/// Model of the phase resolution at tip angle θ:
/// Δθ² = ξ²/N + (Γ² − Γ⁻²)²·tan²θ/(2N²) + ΔX₀².
pub fn dynamic_range_model(
    theta: f64,
    n: f64,
    xi_sq: f64,
    gamma_sq: f64,
    delta_x0_rad: f64,
) -> f64 {
    let g = gamma_sq - 1.0 / gamma_sq;
    let t = theta.tan();
    (xi_sq / n + g * g * t * t / (2.0 * n * n) + delta_x0_rad * delta_x0_rad).sqrt()
}

/// One-parameter least-squares fit of Γ² with ξ² and ΔX₀ held fixed. The
/// model is linear in (Γ² − Γ⁻²)², so the fit is a closed-form slope and
/// the quadratic Γ² − 1/Γ² = √slope inverts exactly.
pub fn fit_dynamic_range(
    points: &[(f64, f64)],
    n: f64,
    xi_sq: f64,
    delta_x0_rad: f64,
) -> Result<DynamicRangeFit> {
    if points.is_empty() {
        return Err(Error::Analysis("fit_dynamic_range needs points".into()));
    }
    let span = points.iter().map(|p| p.0.abs()).fold(0.0, f64::max);
    if span < 0.02 {
        return Err(Error::Analysis(
            "fit_dynamic_range needs tip angles past the squeezing-loss knee".into(),
        ));
    }
    let mut xs = Vec::with_capacity(points.len());
    let mut ys = Vec::with_capacity(points.len());
    for &(theta, dtheta) in points {
        if theta.abs() >= std::f64::consts::FRAC_PI_2 {
            return Err(Error::Analysis("tip angle beyond ±π/2".into()));
        }
        let t = theta.tan();
        xs.push(t * t / (2.0 * n * n));
        ys.push(dtheta * dtheta - xi_sq / n - delta_x0_rad * delta_x0_rad);
    }
    let slope = stats::slope_through_origin(&xs, &ys)?;
    if slope < 0.0 {
        return Err(Error::Analysis("fitted curvature is negative".into()));
    }
    // (Γ² − Γ⁻²)² = slope → Γ² = (√g + √(g + 4))/2 with g = √slope
    let g = slope.sqrt();
    let gamma_sq = 0.5 * (g + (g * g + 4.0).sqrt());
    let rss: f64 = points
        .iter()
        .map(|&(theta, dtheta)| {
            let f = dynamic_range_model(theta, n, xi_sq, gamma_sq, delta_x0_rad);
            (dtheta - f) * (dtheta - f)
        })
        .sum();
    Ok(DynamicRangeFit {
        xi_sq,
        gamma_sq,
        delta_x0_rad,
        residual_norm_rad: (rss / points.len() as f64).sqrt(),
    })
}

/// Tip angle at which the fitted Δθ(θ) curve crosses the projection-noise
/// resolution 1/√N, if it does so inside (0, π/2).
pub fn qpn_crossing(fit: &DynamicRangeFit, n: f64) -> Option<f64> {
    let g = fit.gamma_sq - 1.0 / fit.gamma_sq;
    if g <= 0.0 {
        return None;
    }
    let gap = 1.0 / n - fit.xi_sq / n - fit.delta_x0_rad * fit.delta_x0_rad;
    if gap <= 0.0 {
        return None;
    }
    let tan_c = (2.0 * n * n * gap).sqrt() / g;
    Some(tan_c.atan())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NoiseBudget {
    /// (label, dB vs QPN) pairs.
    pub entries: Vec<(String, f64)>,
    pub total_db: f64,
}

pub fn power_sum_db(entries_db: &[f64]) -> f64 {
    db_from_variance_ratio(entries_db.iter().map(|&d| variance_ratio_from_db(d)).sum())
}

/// Assemble the per-source phase-noise budget relative to QPN, and its
/// power sum.
pub fn noise_budget(cfg: &ExperimentConfig) -> NoiseBudget {
    let n = cfg.n_atoms;
    let qpn = n.sqrt() / 2.0;
    let entries = vec![
        (
            "unidentified".to_string(),
            cfg.fluor.unidentified_noise_db,
        ),
        (
            "background light and readout".to_string(),
            db_from_amplitude_ratio(cfg.fluor.background_noise() / qpn),
        ),
        ("thermal atomic motion".to_string(), THERMAL_BUDGET_DB),
        (
            "photon shot noise".to_string(),
            db_from_amplitude_ratio(cfg.fluor.photon_shot_noise(n) / qpn),
        ),
    ];
    let total_db = power_sum_db(&entries.iter().map(|e| e.1).collect::<Vec<_>>());
    NoiseBudget { entries, total_db }
}
