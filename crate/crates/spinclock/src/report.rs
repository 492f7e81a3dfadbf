//! Run orchestration and human-readable report tables.
//!
//! `simulate` dispatches a parsed configuration to the matching sequencer
//! and `report` turns the raw records into the summary tables (squeezing
//! metrics, noise budget, stability curve, dynamic-range fit, Rabi fit).
//! Tables serialize to CSV with units in the column headers.

use serde::{Deserialize, Serialize};

use crate::analysis::{
    allan_deviation, fit_dynamic_range, fit_rabi, noise_budget, post_select, qpn_crossing,
    qpn_stability, squeezing_metrics, two_measurement_series, RemovalReport,
};
use crate::config::{ExperimentConfig, SequenceKind};
use crate::records::ShotRecord;
use crate::stats;
use crate::{variance_ratio_from_db, Error, Result};

/// Default tip-angle grid of the dynamic-range scan, rad.
pub fn default_tip_angles() -> Vec<f64> {
    (0..21).map(|i| i as f64 * 0.01).collect()
}

/// Default pulse-area grid of the Rabi scan, rad.
pub fn default_pulse_areas() -> Vec<f64> {
    (0..25)
        .map(|i| i as f64 * 2.0 * std::f64::consts::PI / 24.0)
        .collect()
}

/// Raw output of one simulated run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum SimOutput {
    /// One record stream (squeezing characterization or clock operation).
    Shots(Vec<ShotRecord>),
    /// One record stream per tip angle.
    AngleScan(Vec<(f64, Vec<ShotRecord>)>),
    /// (pulse area, mean normalized Jz / (N/2)) pairs.
    RabiScan(Vec<(f64, f64)>),
}

impl SimOutput {
    /// Flattened record view for serialization; Rabi scans store only the
    /// reduced pairs and have no per-shot records.
    pub fn all_records(&self) -> Vec<&ShotRecord> {
        match self {
            SimOutput::Shots(r) => r.iter().collect(),
            SimOutput::AngleScan(groups) => {
                groups.iter().flat_map(|(_, r)| r.iter()).collect()
            }
            SimOutput::RabiScan(_) => Vec::new(),
        }
    }
}

/// Run the sequence selected by the configuration.
pub fn simulate(cfg: &ExperimentConfig) -> Result<SimOutput> {
    match cfg.sequence {
        SequenceKind::SqueezeChar => Ok(SimOutput::Shots(
            crate::sequence::run_squeeze_characterization(cfg)?,
        )),
        SequenceKind::ClockCss | SequenceKind::ClockSqueezed => {
            Ok(SimOutput::Shots(crate::sequence::run_clock(cfg)?))
        }
        SequenceKind::DynamicRange => {
            let thetas = default_tip_angles();
            let groups = crate::sequence::run_dynamic_range(cfg, &thetas)?;
            Ok(SimOutput::AngleScan(
                thetas.into_iter().zip(groups).collect(),
            ))
        }
        SequenceKind::RabiScan => Ok(SimOutput::RabiScan(crate::sequence::run_rabi_scan(
            cfg,
            &default_pulse_areas(),
        )?)),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReportTable {
    pub title: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl ReportTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("# {}\n", self.title));
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

pub fn tables_to_csv(tables: &[ReportTable]) -> String {
    tables
        .iter()
        .map(|t| t.to_csv())
        .collect::<Vec<_>>()
        .join("\n")
}

fn fmt(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else if v.abs() >= 1e5 || v.abs() < 1e-3 {
        format!("{v:.6e}")
    } else {
        format!("{v:.6}")
    }
}

fn removal_row(report: &RemovalReport) -> Vec<String> {
    vec![
        report.total.to_string(),
        report.kept.to_string(),
        report.qnd_out_of_range.to_string(),
        report.fluor_failed.to_string(),
        report.clock_outlier.to_string(),
        fmt(report.removed_fraction()),
    ]
}

fn removal_table(report: &RemovalReport) -> ReportTable {
    ReportTable {
        title: "post-selection summary".into(),
        columns: vec![
            "total_shots".into(),
            "kept_shots".into(),
            "probe_out_of_range".into(),
            "fluorescence_failed".into(),
            "clock_outlier".into(),
            "removed_fraction".into(),
        ],
        rows: vec![removal_row(report)],
    }
}

fn noise_budget_table(cfg: &ExperimentConfig) -> ReportTable {
    let b = noise_budget(cfg);
    let mut rows: Vec<Vec<String>> = b
        .entries
        .iter()
        .map(|(label, db)| vec![label.clone(), fmt(*db)])
        .collect();
    rows.push(vec!["total".into(), fmt(b.total_db)]);
    ReportTable {
        title: "phase noise budget relative to projection noise".into(),
        columns: vec!["source".into(), "level_db".into()],
        rows,
    }
}

fn squeeze_char_report(
    cfg: &ExperimentConfig,
    records: &mut Vec<ShotRecord>,
) -> Result<Vec<ReportTable>> {
    let removal = post_select(records, cfg)?;
    let contrast = cfg.contrast_for_lattice()?;
    let m = squeezing_metrics(records, cfg, contrast)?;
    let metrics = ReportTable {
        title: "squeezing characterization".into(),
        columns: vec![
            "lattice_ramp_ms".into(),
            "free_fall_ms".into(),
            "contrast".into(),
            "variance_reduction_db".into(),
            "metrological_squeezing_db".into(),
            "phase_resolution_urad".into(),
            "shots_used".into(),
        ],
        rows: vec![vec![
            fmt(cfg.lattice_ramp_ms),
            fmt(cfg.free_fall_ms),
            fmt(contrast),
            fmt(m.variance_reduction_db),
            fmt(m.wineland_db),
            fmt(m.phase_resolution_rad * 1e6),
            m.shots_used.to_string(),
        ]],
    };
    Ok(vec![metrics, noise_budget_table(cfg), removal_table(&removal)])
}

/// Stability averaging times: powers of two cycles up to half the run.
fn default_taus(cfg: &ExperimentConfig, n_records: usize) -> Vec<f64> {
    let mut taus = Vec::new();
    let mut l = 1u64;
    while (l as f64) <= n_records as f64 / 2.0 && taus.len() < 12 {
        taus.push(l as f64 * cfg.cycle_s);
        l *= 2;
    }
    taus
}

fn clock_report(
    cfg: &ExperimentConfig,
    records: &mut Vec<ShotRecord>,
    confidence: f64,
) -> Result<Vec<ReportTable>> {
    let removal = post_select(records, cfg)?;
    let contrast = match cfg.sequence {
        SequenceKind::ClockSqueezed => cfg.contrast_for_lattice()?,
        _ => cfg.css_contrast,
    };
    let taus = default_taus(cfg, records.len());
    let curve = allan_deviation(records, cfg, contrast, &taus, confidence)?;
    let rows = curve
        .taus_s
        .iter()
        .enumerate()
        .map(|(i, &tau)| {
            vec![
                fmt(tau),
                fmt(curve.sigma_y[i]),
                fmt(curve.ci_low[i]),
                fmt(curve.ci_high[i]),
                fmt(qpn_stability(cfg.t_int_s(), cfg.cycle_s, cfg.n_atoms, tau)),
                curve.n_pairs_used[i].to_string(),
            ]
        })
        .collect();
    let stability = ReportTable {
        title: "fractional frequency stability".into(),
        columns: vec![
            "tau_s".into(),
            "sigma_y".into(),
            "ci_low".into(),
            "ci_high".into(),
            "projection_noise_limit".into(),
            "pairs_used".into(),
        ],
        rows,
    };
    Ok(vec![stability, removal_table(&removal)])
}

fn dynamic_range_report(
    cfg: &ExperimentConfig,
    groups: &mut [(f64, Vec<ShotRecord>)],
) -> Result<Vec<ReportTable>> {
    let n = cfg.n_atoms;
    let contrast = cfg.contrast_for_lattice()?;
    let mut points = Vec::with_capacity(groups.len());
    let mut rows = Vec::with_capacity(groups.len());
    for (theta, records) in groups.iter_mut() {
        post_select(records, cfg)?;
        let phases: Vec<f64> = two_measurement_series(records, cfg)?
            .into_iter()
            .flatten()
            .map(|jz| (jz / (contrast * n / 2.0)).clamp(-1.0, 1.0).asin())
            .collect();
        if phases.len() < 2 {
            return Err(Error::Analysis(format!(
                "not enough kept shots at tip angle {theta} rad"
            )));
        }
        let dtheta = stats::sample_std(&phases);
        points.push((*theta, dtheta));
        rows.push(vec![
            fmt(*theta),
            fmt(dtheta * 1e6),
            fmt(1e6 / n.sqrt()),
            phases.len().to_string(),
        ]);
    }
    let scan = ReportTable {
        title: "phase resolution vs tip angle".into(),
        columns: vec![
            "tip_angle_rad".into(),
            "delta_theta_urad".into(),
            "projection_limit_urad".into(),
            "shots_used".into(),
        ],
        rows,
    };

    // fit with the prepared squeezing held fixed; the angle-independent
    // technical floor comes from the θ = 0 point when the scan has one
    let xi_sq = variance_ratio_from_db(cfg.qnd.prepared_var_jz_db);
    let dx0 = points
        .iter()
        .find(|(t, _)| *t == 0.0)
        .map(|(_, d)| (d * d - xi_sq / n).max(0.0).sqrt())
        .unwrap_or(0.0);
    let fit = fit_dynamic_range(&points, n, xi_sq, dx0)?;
    let crossing = qpn_crossing(&fit, n);
    let fit_table = ReportTable {
        title: "dynamic range fit".into(),
        columns: vec![
            "antisqueezing_db".into(),
            "fixed_squeezing_db".into(),
            "fixed_floor_urad".into(),
            "rms_residual_urad".into(),
            "projection_crossing_mrad".into(),
        ],
        rows: vec![vec![
            fmt(crate::db_from_variance_ratio(fit.gamma_sq)),
            fmt(crate::db_from_variance_ratio(fit.xi_sq)),
            fmt(fit.delta_x0_rad * 1e6),
            fmt(fit.residual_norm_rad * 1e6),
            crossing.map(|c| fmt(c * 1e3)).unwrap_or_else(|| "none".into()),
        ]],
    };
    Ok(vec![scan, fit_table])
}

fn rabi_report(scan: &[(f64, f64)]) -> Result<Vec<ReportTable>> {
    let (contrast, residual) = fit_rabi(scan)?;
    let mut rows: Vec<Vec<String>> = scan
        .iter()
        .map(|&(a, y)| vec![fmt(a), fmt(y)])
        .collect();
    rows.push(vec!["fitted_contrast".into(), fmt(contrast)]);
    rows.push(vec!["rms_residual".into(), fmt(residual)]);
    Ok(vec![ReportTable {
        title: "rabi contrast scan".into(),
        columns: vec!["pulse_area_rad".into(), "mean_normalized_jz".into()],
        rows,
    }])
}

/// Build the report tables for a run. Post-selection flags are recomputed
/// from the raw record values, so reports are reproducible from stored
/// record files alone.
pub fn report(
    cfg: &ExperimentConfig,
    output: &mut SimOutput,
    confidence: f64,
) -> Result<Vec<ReportTable>> {
    match (cfg.sequence, output) {
        (SequenceKind::SqueezeChar, SimOutput::Shots(records)) => {
            squeeze_char_report(cfg, records)
        }
        (SequenceKind::ClockCss | SequenceKind::ClockSqueezed, SimOutput::Shots(records)) => {
            clock_report(cfg, records, confidence)
        }
        (SequenceKind::DynamicRange, SimOutput::AngleScan(groups)) => {
            dynamic_range_report(cfg, groups)
        }
        (SequenceKind::RabiScan, SimOutput::RabiScan(scan)) => rabi_report(scan),
        _ => Err(Error::Invalid(
            "simulation output does not match the configured sequence".into(),
        )),
    }
}

/// Sidecar metadata written next to a record file.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub config_sha256: String,
    pub seed: u64,
    pub shots_written: u64,
    pub records_path: String,
    pub started_utc: String,
    pub finished_utc: String,
    pub tool_version: String,
}

impl RunManifest {
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}
