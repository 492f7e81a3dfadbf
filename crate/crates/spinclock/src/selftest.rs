//! Fast built-in diagnostics: deterministic invariant checks over every
//! stage of the pipeline, runnable in the field via `spinclock selftest`.

use crate::analysis::{
    chi2_interval, dynamic_range_model, fit_dynamic_range, noise_budget, pooled_std,
};
use crate::config::ExperimentConfig;
use crate::measure::{beatnote_correct, beatnote_shift, normalized_jz, qnd_measure};
use crate::records::ShotRecord;
use crate::sequence::{calibrate_preparation, run_squeeze_characterization};
use crate::spin::{composite_residual, make_css};
use crate::variance_ratio_from_db;

#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, result: std::result::Result<String, String>) -> CheckOutcome {
    match result {
        Ok(detail) => CheckOutcome { name, passed: true, detail },
        Err(detail) => CheckOutcome { name, passed: false, detail },
    }
}

fn near(got: f64, want: f64, tol: f64, what: &str) -> std::result::Result<String, String> {
    if (got - want).abs() <= tol {
        Ok(format!("{what}: {got:.6} (expected {want:.6})"))
    } else {
        Err(format!("{what}: {got:.6}, expected {want:.6} ± {tol:.6}"))
    }
}

pub fn all_passed(outcomes: &[CheckOutcome]) -> bool {
    outcomes.iter().all(|c| c.passed)
}

/// Run the full diagnostic suite. Every check is deterministic.
pub fn selftest() -> Vec<CheckOutcome> {
    let cfg = ExperimentConfig::default();
    let n = cfg.n_atoms;
    let v = n / 4.0;
    let mut out = Vec::new();

    out.push(check("coherent state projection variance", {
        make_css(n)
            .map_err(|e| e.to_string())
            .and_then(|s| near(s.var_jz(), v, 1e-9 * v, "var_jz"))
    }));

    out.push(check("rotation preserves ellipse area", {
        make_css(n).map_err(|e| e.to_string()).and_then(|s| {
            let r = crate::spin::Rotation::equatorial(0.7, 1.1).with_amplitude_error(0.01);
            let rotated = crate::spin::rotate(&s, &r).map_err(|e| e.to_string())?;
            near(rotated.cov_det(), s.cov_det(), 1e-6 * s.cov_det(), "cov determinant")
        })
    }));

    out.push(check("composite pulse error is second order", (|| {
        let r1 = composite_residual(n, 1e-2).map_err(|e| e.to_string())?;
        let r2 = composite_residual(n, 2e-2).map_err(|e| e.to_string())?;
        near(r2 / r1, 4.0, 0.15, "residual ratio for doubled error")
    })()));

    out.push(check("shear calibration reaches the pre-squeeze target", {
        calibrate_preparation(&cfg).map_err(|e| e.to_string()).and_then(|cal| {
            near(
                cal.presqueezed_ratio,
                variance_ratio_from_db(cfg.presqueeze_db),
                1e-9,
                "pre-squeezed variance ratio",
            )
        })
    }));

    out.push(check("probe strength calibration inversion", {
        let prior = variance_ratio_from_db(cfg.qnd.probe_calibration_prior_db) * v;
        let target = variance_ratio_from_db(cfg.qnd.prepared_var_jz_db) * v;
        let m = cfg.qnd.measurement_variance(n);
        near(
            1.0 / (1.0 / target - 1.0 / prior),
            m,
            1e-9 * m,
            "probe resolution variance",
        )
    }));

    out.push(check("probe conditioning matches the gaussian update", (|| {
        let mut rng = crate::sequence::shot_rng(1, 0);
        let state = make_css(n).map_err(|e| e.to_string())?;
        let (_, post) = qnd_measure(&state, &cfg.qnd, &mut rng);
        let r_var = cfg.qnd.measurement_variance(n) + cfg.qnd.thermal_noise(n).powi(2);
        let want = 1.0 / (1.0 / v + 1.0 / r_var);
        near(post.var_jz(), want, 1e-9 * want, "posterior variance")
    })()));

    out.push(check("beatnote shift and correction are inverse", {
        let shifted = 42.0 + beatnote_shift(n, 2.0e6, &cfg.qnd);
        beatnote_correct(shifted, n, 2.0e6, &cfg.qnd)
            .map_err(|e| e.to_string())
            .and_then(|back| near(back, 42.0, 1e-9, "recovered value"))
    }));

    out.push(check("fluorescence normalization identity", {
        normalized_jz(3.0, 1.0, 1000.0, 65.0)
            .map_err(|e| e.to_string())
            .and_then(|jz| near(jz, 250.0, 1e-9, "normalized Jz for 3:1 counts"))
    }));

    out.push(check("noise budget total", {
        near(noise_budget(&cfg).total_db, -7.97, 0.10, "budget power sum (dB)")
    }));

    out.push(check("chi-square interval brackets the estimate", {
        chi2_interval(1.0, 200, 0.68)
            .map_err(|e| e.to_string())
            .and_then(|(lo, hi)| {
                if lo < 1.0 && 1.0 < hi && (lo - 0.9537).abs() < 5e-3 {
                    Ok(format!("interval [{lo:.4}, {hi:.4}]"))
                } else {
                    Err(format!("interval [{lo:.4}, {hi:.4}] malformed"))
                }
            })
    }));

    out.push(check("pooled deviation weighting", {
        pooled_std(&[1.0, 3.0], &[101, 101])
            .map_err(|e| e.to_string())
            .and_then(|s| near(s, 2.0, 1e-12, "pooled deviation"))
    }));

    out.push(check("dynamic range fit round trip", {
        let gamma_sq = variance_ratio_from_db(36.0);
        let xi = variance_ratio_from_db(-14.0);
        let points: Vec<(f64, f64)> = (0..11)
            .map(|i| {
                let t = i as f64 * 0.02;
                (t, dynamic_range_model(t, n, xi, gamma_sq, 9.0e-4))
            })
            .collect();
        fit_dynamic_range(&points, n, xi, 9.0e-4)
            .map_err(|e| e.to_string())
            .and_then(|fit| near(fit.gamma_sq, gamma_sq, 1e-6 * gamma_sq, "anti-squeezing"))
    }));

    out.push(check("simulation is reproducible", (|| {
        let small = ExperimentConfig { shots: 20, ..cfg.clone() };
        let a = run_squeeze_characterization(&small).map_err(|e| e.to_string())?;
        let b = run_squeeze_characterization(&small).map_err(|e| e.to_string())?;
        let ja = serde_json::to_string(&a).map_err(|e| e.to_string())?;
        let jb = serde_json::to_string(&b).map_err(|e| e.to_string())?;
        if ja == jb {
            Ok(format!("{} shots byte-identical", a.len()))
        } else {
            Err("repeated runs differ".to_string())
        }
    })()));

    out.push(check("record serialization round trip", (|| {
        let small = ExperimentConfig { shots: 5, ..cfg.clone() };
        let records = run_squeeze_characterization(&small).map_err(|e| e.to_string())?;
        let lines: Vec<String> = records
            .iter()
            .map(|r| serde_json::to_string(r).map_err(|e| e.to_string()))
            .collect::<std::result::Result<_, _>>()?;
        let back: Vec<ShotRecord> = lines
            .iter()
            .map(|l| serde_json::from_str(l).map_err(|e: serde_json::Error| e.to_string()))
            .collect::<std::result::Result<_, _>>()?;
        let again: Vec<String> = back
            .iter()
            .map(|r| serde_json::to_string(r).map_err(|e| e.to_string()))
            .collect::<std::result::Result<_, _>>()?;
        if lines == again {
            Ok("round trip is byte-identical".to_string())
        } else {
            Err("round trip altered records".to_string())
        }
    })()));

    out
}
