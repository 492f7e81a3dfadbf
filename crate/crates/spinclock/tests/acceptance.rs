//! End-to-end acceptance gate. Each test prints one summary line with the
//! measured values, then asserts the published tolerances.

use spinclock::analysis::{
    allan_deviation, chi2_interval, dynamic_range_model, fit_dynamic_range, noise_budget,
    post_select, power_sum_db, qpn_stability, squeezing_metrics, two_measurement_series,
};
use spinclock::config::{ExperimentConfig, SequenceKind};
use spinclock::measure::{push_and_fluoresce, qnd_measure, thermal_inhomogeneity_noise, FluorConfig};
use spinclock::records::ShotFlags;
use spinclock::sequence::{
    run_clock, run_dynamic_range, run_squeeze_characterization, shot_rng,
};
use spinclock::spin::{composite_residual, make_css};
use spinclock::stats::{
    chi2_cdf, linear_fit, mean, normal, sample_variance, standard_normal,
};
use spinclock::{db_from_amplitude_ratio, db_from_variance_ratio, variance_ratio_from_db, OMEGA_0};

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

#[test]
fn criterion_1_squeezing_characterization() {
    let cfg = ExperimentConfig { shots: 10_000, seed: 42, ..ExperimentConfig::default() };
    let records = run_squeeze_characterization(&cfg).unwrap();
    let contrast = cfg.contrast_for_lattice().unwrap();
    let m = squeezing_metrics(&records, &cfg, contrast).unwrap();
    let dtheta_urad = m.phase_resolution_rad * 1e6;
    let ok = (m.variance_reduction_db + 6.6).abs() <= 0.7
        && (m.wineland_db + 5.8).abs() <= 0.7
        && (753.0..=875.0).contains(&dtheta_urad);
    println!(
        "CRITERION 1 squeezing characterization: {} — variance reduction {:.3} dB (−6.6 ± 0.7), metrological squeezing {:.3} dB (−5.8 ± 0.7), resolution {:.1} µrad ([753, 875])",
        verdict(ok), m.variance_reduction_db, m.wineland_db, dtheta_urad
    );
    assert!(ok);
}

#[test]
fn criterion_2_contrast_sweep() {
    // (lattice ramp ms, fall ms, published contrast, published squeezing dB)
    let rows = [
        (0.2, 2.0, 0.910, -5.1),
        (0.2, 3.0, 0.906, -6.2),
        (0.2, 4.0, 0.917, -5.8),
        (7.0, 2.0, 0.727, -3.2),
        (7.0, 4.0, 0.735, -3.7),
        (7.0, 6.0, 0.736, -4.5),
        (7.0, 8.0, 0.738, -4.3),
    ];
    let mut all_ok = true;
    let mut lines = Vec::new();
    for (i, &(lattice, fall, c_ref, xi_ref)) in rows.iter().enumerate() {
        let cfg = ExperimentConfig {
            lattice_ramp_ms: lattice,
            free_fall_ms: fall,
            shots: 10_000,
            seed: 100 + i as u64,
            ..ExperimentConfig::default()
        };
        let records = run_squeeze_characterization(&cfg).unwrap();
        let contrast = cfg.contrast_for_lattice().unwrap();
        let m = squeezing_metrics(&records, &cfg, contrast).unwrap();
        let c_ok = (contrast - c_ref).abs() <= 0.01;
        let xi_ok = (m.wineland_db - xi_ref).abs() <= 0.7;
        all_ok &= c_ok && xi_ok;
        lines.push(format!(
            "  ({lattice} ms, {fall} ms): C {contrast:.3} vs {c_ref:.3} [{}], squeezing {:.2} vs {xi_ref:.1} dB [{}]",
            verdict(c_ok), m.wineland_db, verdict(xi_ok)
        ));
    }
    println!("CRITERION 2 contrast/squeezing sweep: {}", verdict(all_ok));
    for l in &lines {
        println!("{l}");
    }
    assert!(all_ok);
}

#[test]
fn criterion_3_noise_budget() {
    let cfg = ExperimentConfig::default();
    let n = cfg.n_atoms;
    let qpn = n.sqrt() / 2.0;
    let analytic = noise_budget(&cfg).total_db;
    let analytic_ok = (analytic + 7.96).abs() <= 0.05;

    // Monte Carlo: each source isolated, then power-summed
    let shots = 40_000;
    let quiet = FluorConfig {
        photons_per_atom: 1.0e9,
        background_sigma_photons: 0.0,
        position_efficiency_slope: 0.0,
        unidentified_noise_db: -300.0,
        ..FluorConfig::default()
    };
    let mut rng = shot_rng(999, 0);
    let run_db = |fc: &FluorConfig, rng: &mut _| -> f64 {
        let xs: Vec<f64> = (0..shots)
            .map(|_| push_and_fluoresce(0.0, n, n, fc, rng).unwrap().normalized_jz)
            .collect();
        db_from_amplitude_ratio(sample_variance(&xs).sqrt() / qpn)
    };
    let photon = run_db(&FluorConfig { photons_per_atom: 65.0, ..quiet }, &mut rng);
    let scale = quiet.photons_per_atom / FluorConfig::default().photons_per_atom;
    let background = run_db(
        &FluorConfig {
            background_sigma_photons: FluorConfig::default().background_sigma_photons * scale,
            ..quiet
        },
        &mut rng,
    );
    let unid = run_db(&FluorConfig { unidentified_noise_db: -11.0, ..quiet }, &mut rng);
    let th_sigma = thermal_inhomogeneity_noise(n, cfg.qnd.thermal_beta_sq);
    let th: Vec<f64> = (0..shots).map(|_| normal(&mut rng, 0.0, th_sigma)).collect();
    let thermal = db_from_amplitude_ratio(sample_variance(&th).sqrt() / qpn);

    let mc_total = power_sum_db(&[photon, background, unid, thermal]);
    let mc_ok = (mc_total - analytic).abs() <= 0.3;
    println!(
        "CRITERION 3 noise budget: {} — analytic {:.4} dB (−7.96 ± 0.05), Monte Carlo {:.4} dB (Δ = {:.3}, tol 0.3)",
        verdict(analytic_ok && mc_ok), analytic, mc_total, (mc_total - analytic).abs()
    );
    assert!(analytic_ok);
    assert!(mc_ok);
}

#[test]
fn criterion_4_clock_stability() {
    let cfg = ExperimentConfig {
        n_atoms: 240_000.0,
        shots: 10_000,
        seed: 42,
        sequence: SequenceKind::ClockSqueezed,
        ..ExperimentConfig::default()
    };
    let records = run_clock(&cfg).unwrap();
    let contrast = cfg.contrast_for_lattice().unwrap();
    let curve = allan_deviation(&records, &cfg, contrast, &[1.0], 0.68).unwrap();
    let sigma = curve.sigma_y[0];
    let reference = 1.3205e-11;
    let gain_db = 20.0 * (reference / sigma).log10();
    let sigma_ok = (sigma - 8.4e-12).abs() <= 0.5e-12;
    let gain_ok = (gain_db - 3.8).abs() <= 0.4;
    println!(
        "CRITERION 4 clock stability: {} — σ_y(1 s) = {:.3e} (8.4e-12 ± 0.5e-12), gain {:.2} dB (3.8 ± 0.4)",
        verdict(sigma_ok && gain_ok), sigma, gain_db
    );
    assert!(sigma_ok);
    assert!(gain_ok);
}

#[test]
fn criterion_5_allan_scaling_and_floor() {
    let base = ExperimentConfig {
        n_atoms: 240_000.0,
        ramsey_ms: 1.3,
        shots: 16_384,
        seed: 7,
        sequence: SequenceKind::ClockSqueezed,
        ..ExperimentConfig::default()
    };
    let slope_taus = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0];
    let contrast = base.contrast_for_lattice().unwrap();

    let run = |floor: f64, seed: u64| {
        let cfg = ExperimentConfig { stability_floor: floor, seed, ..base.clone() };
        let records = run_clock(&cfg).unwrap();
        let slope_curve =
            allan_deviation(&records, &cfg, contrast, &slope_taus, 0.68).unwrap();
        let long_curve =
            allan_deviation(&records, &cfg, contrast, &[512.0], 0.68).unwrap();
        (slope_curve, long_curve.sigma_y[0])
    };

    let (curve, sigma_512) = run(4.0e-12, 7);
    let lx: Vec<f64> = curve.taus_s.iter().map(|t| t.ln()).collect();
    let ly: Vec<f64> = curve.sigma_y.iter().map(|s| s.ln()).collect();
    let (slope, _) = linear_fit(&lx, &ly).unwrap();
    let slope_ok = (slope + 0.5).abs() <= 0.05;

    let below_qpn = curve.taus_s.iter().zip(&curve.sigma_y).all(|(&tau, &s)| {
        s < qpn_stability(base.t_int_s(), base.cycle_s, base.n_atoms, tau)
    });

    // flattening: the 512 s point sits well above the white-noise
    // extrapolation when the floor is on, and on it when the floor is off
    let white_512 = curve.sigma_y[0] / 512f64.sqrt();
    let flat_ratio = sigma_512 / white_512;
    let (_, sigma_512_off) = run(0.0, 7);
    let off_ratio = sigma_512_off / white_512;
    let flat_ok = (1.5..=4.0).contains(&flat_ratio) && off_ratio < 1.45;

    println!(
        "CRITERION 5 stability scaling: {} — log-log slope {:.3} (−0.5 ± 0.05), below projection curve over [1, 64] s: {}, 512 s flattening ratio {:.2} with floor ({:.2} without)",
        verdict(slope_ok && below_qpn && flat_ok), slope, below_qpn, flat_ratio, off_ratio
    );
    assert!(slope_ok, "slope {slope}");
    assert!(below_qpn);
    assert!(flat_ok, "flattening {flat_ratio} vs {off_ratio}");
}

#[test]
fn criterion_6_dynamic_range() {
    // closed-form fit on noiseless synthetic data: exact recovery
    let n = 240_000.0;
    let xi_sq = variance_ratio_from_db(-14.0);
    let dx0 = (740.0e-6f64.powi(2) + 590.0e-6f64.powi(2)).sqrt();
    let truth = variance_ratio_from_db(37.0);
    let synth: Vec<(f64, f64)> = (0..21)
        .map(|i| {
            let t = i as f64 * 0.01;
            (t, dynamic_range_model(t, n, xi_sq, truth, dx0))
        })
        .collect();
    let fit = fit_dynamic_range(&synth, n, xi_sq, dx0).unwrap();
    let fit_db = db_from_variance_ratio(fit.gamma_sq);
    let fit_ok = (36.0..=38.0).contains(&fit_db) && fit.residual_norm_rad < 1e-9;

    // simulated scan: resolution crosses the projection limit 1/√N
    let cfg = ExperimentConfig {
        n_atoms: n,
        shots: 10_000,
        seed: 21,
        sequence: SequenceKind::DynamicRange,
        ..ExperimentConfig::default()
    };
    let thetas: Vec<f64> = (0..21).map(|i| i as f64 * 0.01).collect();
    let groups = run_dynamic_range(&cfg, &thetas).unwrap();
    let contrast = cfg.contrast_for_lattice().unwrap();
    let dtheta: Vec<f64> = groups
        .iter()
        .map(|g| {
            let phases: Vec<f64> = two_measurement_series(g, &cfg)
                .unwrap()
                .into_iter()
                .flatten()
                .map(|jz| (jz / (contrast * n / 2.0)).clamp(-1.0, 1.0).asin())
                .collect();
            sample_variance(&phases).sqrt()
        })
        .collect();
    let limit = 1.0 / n.sqrt();
    let crossing = thetas
        .windows(2)
        .zip(dtheta.windows(2))
        .find(|(_, d)| d[0] < limit && d[1] >= limit)
        .map(|(t, d)| {
            // interpolate in Δθ² which is the linear quantity
            let (a, b) = (d[0] * d[0], d[1] * d[1]);
            t[0] + (t[1] - t[0]) * (limit * limit - a) / (b - a)
        });
    let crossing_mrad = crossing.map(|c| c * 1e3).unwrap_or(f64::NAN);
    let crossing_ok = (110.0..=145.0).contains(&crossing_mrad);
    println!(
        "CRITERION 6 dynamic range: {} — synthetic fit {:.4} dB ([36, 38], residual {:.1e} rad), projection-limit crossing {:.1} mrad ([110, 145])",
        verdict(fit_ok && crossing_ok), fit_db, fit.residual_norm_rad, crossing_mrad
    );
    assert!(fit_ok);
    assert!(crossing_ok, "crossing {crossing_mrad} mrad");
}

#[test]
fn criterion_7_oracle_equivalences() {
    // (a) gap-free stability statistic vs a direct transcription
    let n = 240_000.0;
    let cfg = ExperimentConfig { n_atoms: n, ramsey_ms: 1.3, ..ExperimentConfig::default() };
    let mut rng = shot_rng(3, 0);
    let jz: Vec<f64> = (0..4096).map(|_| normal(&mut rng, 2.0, 60.0)).collect();
    let records: Vec<spinclock::records::ShotRecord> = jz
        .iter()
        .enumerate()
        .map(|(i, &v)| spinclock::records::ShotRecord {
            shot_index: i as u64,
            t_s: i as f64,
            qnd1_jz: None,
            qnd2_jz: None,
            fluor: spinclock::measure::FluorOutcome {
                counts_up: 1.0,
                counts_down: 1.0,
                pushed_position_mm: 0.0,
                normalized_jz: v,
            },
            delta_hz: 0.0,
            theta_true: None,
            flags: ShotFlags::default(),
        })
        .collect();
    let taus = [1.0, 4.0, 32.0, 256.0];
    let curve = allan_deviation(&records, &cfg, 1.0, &taus, 0.68).unwrap();
    let ys: Vec<f64> = jz
        .iter()
        .map(|v| v / (n / 2.0) / (OMEGA_0 * cfg.t_int_s()))
        .collect();
    let mut max_rel: f64 = 0.0;
    for (i, &tau) in taus.iter().enumerate() {
        let l = tau as usize;
        let m = ys.len() / l;
        let bins: Vec<f64> =
            (0..m).map(|k| ys[k * l..(k + 1) * l].iter().sum::<f64>() / l as f64).collect();
        let acc: f64 = bins.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
        let direct = (acc / (2.0 * (m - 1) as f64)).sqrt();
        max_rel = max_rel.max(((curve.sigma_y[i] - direct) / direct).abs());
    }
    let a_ok = max_rel < 1e-12;

    // (b) probe conditional variance vs the Gaussian update over 1e5 shots
    let qcfg = spinclock::measure::QndConfig::default();
    let nq = 390_000.0;
    let base = make_css(nq).unwrap();
    let prior = base.var_jz();
    let r_var = qcfg.measurement_variance(nq) + qcfg.thermal_noise(nq).powi(2);
    let mut rng = shot_rng(11, 0);
    let mut errs = Vec::with_capacity(100_000);
    for _ in 0..100_000 {
        let truth = normal(&mut rng, 0.0, prior.sqrt());
        let noise = normal(&mut rng, 0.0, r_var.sqrt());
        let outcome = truth + noise;
        let gain = prior / (prior + r_var);
        errs.push(truth - gain * outcome);
    }
    let closed_form = 1.0 / (1.0 / prior + 1.0 / r_var);
    let b_rel = ((sample_variance(&errs) - closed_form) / closed_form).abs();
    // and the library's own conditioned state agrees exactly
    let (_, post) = qnd_measure(&base, &qcfg, &mut rng);
    let b_ok = b_rel < 0.01 && ((post.var_jz() - closed_form) / closed_form).abs() < 1e-12;

    // (c) composite-pulse error exponent
    let eps: Vec<f64> = (0..10).map(|i| 10f64.powf(-3.0 + 2.0 * i as f64 / 9.0)).collect();
    let lx: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
    let ly: Vec<f64> = eps
        .iter()
        .map(|&e| composite_residual(390_000.0, e).unwrap().ln())
        .collect();
    let (exponent, _) = linear_fit(&lx, &ly).unwrap();
    let c_ok = (1.9..=2.1).contains(&exponent);

    // (d) normalized readout variance identity to 5%
    let fcfg = FluorConfig::default();
    let mut rng = shot_rng(29, 0);
    let shots = 100_000;
    let (mut jzs, mut x_up, mut x_dn) =
        (Vec::with_capacity(shots), Vec::with_capacity(shots), Vec::with_capacity(shots));
    for _ in 0..shots {
        let t = normal(&mut rng, 0.0, (nq / 4.0).sqrt());
        let o = push_and_fluoresce(t, nq, nq, &fcfg, &mut rng).unwrap();
        jzs.push(o.normalized_jz);
        x_up.push(o.counts_up / fcfg.photons_per_atom - (nq / 2.0 + t));
        x_dn.push(o.counts_down / fcfg.photons_per_atom - (nq / 2.0 - t));
    }
    let (mu, md) = (mean(&x_up), mean(&x_dn));
    let cov: f64 = x_up.iter().zip(&x_dn).map(|(a, b)| (a - mu) * (b - md)).sum::<f64>()
        / (shots as f64 - 1.0);
    let identity =
        nq / 4.0 + sample_variance(&x_dn) / 4.0 + sample_variance(&x_up) / 4.0 - cov / 2.0;
    let d_rel = ((sample_variance(&jzs) - identity) / identity).abs();
    let d_ok = d_rel < 0.05;

    // (e) interval endpoints vs an independent bisection of the CDF
    let mut e_max: f64 = 0.0;
    for &(ns, m) in &[(200usize, 0.68), (50, 0.95), (1000, 0.90)] {
        let dof = (ns - 1) as f64;
        let bisect = |p: f64| -> f64 {
            let (mut lo, mut hi) = (1e-9, 10.0 * dof + 100.0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if chi2_cdf(dof, mid) < p {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        };
        let (lo, hi) = chi2_interval(1.0, ns, m).unwrap();
        let want_lo = (dof / bisect((1.0 + m) / 2.0)).sqrt();
        let want_hi = (dof / bisect((1.0 - m) / 2.0)).sqrt();
        e_max = e_max.max((lo - want_lo).abs()).max((hi - want_hi).abs());
    }
    let e_ok = e_max < 1e-6;

    println!(
        "CRITERION 7 oracle equivalences: {} — (a) stability rel {:.1e} [{}], (b) conditioning rel {:.4} [{}], (c) pulse-error exponent {:.3} [{}], (d) readout identity rel {:.4} [{}], (e) interval max err {:.1e} [{}]",
        verdict(a_ok && b_ok && c_ok && d_ok && e_ok),
        max_rel, verdict(a_ok), b_rel, verdict(b_ok), exponent, verdict(c_ok),
        d_rel, verdict(d_ok), e_max, verdict(e_ok)
    );
    assert!(a_ok && b_ok && c_ok && d_ok && e_ok);
}

#[test]
fn criterion_8_post_selection() {
    let cfg = ExperimentConfig { shots: 10_000, seed: 5, ..ExperimentConfig::default() };
    let mut records = run_squeeze_characterization(&cfg).unwrap();
    let removed = records.iter().filter(|r| r.flags.any()).count() as f64
        / records.len() as f64;
    let frac_ok = (0.10..=0.15).contains(&removed);

    // exact idempotence: rerunning changes no flags, and rerunning on the
    // kept subset removes nothing
    let report1 = post_select(&mut records, &cfg).unwrap();
    let flags1: Vec<ShotFlags> = records.iter().map(|r| r.flags).collect();
    let report2 = post_select(&mut records, &cfg).unwrap();
    let flags2: Vec<ShotFlags> = records.iter().map(|r| r.flags).collect();
    let mut kept_only: Vec<_> = records.iter().filter(|r| !r.flags.any()).cloned().collect();
    let report3 = post_select(&mut kept_only, &cfg).unwrap();
    let idempotent = flags1 == flags2
        && report1.kept == report2.kept
        && report3.kept == kept_only.len();
    println!(
        "CRITERION 8 post-selection: {} — removed fraction {:.4} ([0.10, 0.15]), idempotent: {}",
        verdict(frac_ok && idempotent), removed, idempotent
    );
    assert!(frac_ok, "removed {removed}");
    assert!(idempotent);
}

#[test]
fn criterion_9_determinism() {
    // library level: identical (config, seed) gives byte-identical records
    // for every sequence kind (the CLI file-level check lives in the CLI
    // integration tests)
    let mut ok = true;
    for sequence in [
        SequenceKind::SqueezeChar,
        SequenceKind::ClockCss,
        SequenceKind::ClockSqueezed,
        SequenceKind::DynamicRange,
        SequenceKind::RabiScan,
    ] {
        let cfg = ExperimentConfig {
            shots: 200,
            seed: 31,
            n_atoms: 240_000.0,
            sequence,
            ..ExperimentConfig::default()
        };
        let mut a = spinclock::report::simulate(&cfg).unwrap();
        let mut b = spinclock::report::simulate(&cfg).unwrap();
        ok &= serde_json::to_string(&a).unwrap() == serde_json::to_string(&b).unwrap();
        let ra = spinclock::report::report(&cfg, &mut a, 0.68).unwrap();
        let rb = spinclock::report::report(&cfg, &mut b, 0.68).unwrap();
        ok &= spinclock::report::tables_to_csv(&ra) == spinclock::report::tables_to_csv(&rb);
    }
    // seed sensitivity sanity check
    let cfg1 = ExperimentConfig { shots: 50, seed: 1, ..ExperimentConfig::default() };
    let cfg2 = ExperimentConfig { shots: 50, seed: 2, ..ExperimentConfig::default() };
    let r1 = run_squeeze_characterization(&cfg1).unwrap();
    let r2 = run_squeeze_characterization(&cfg2).unwrap();
    ok &= serde_json::to_string(&r1).unwrap() != serde_json::to_string(&r2).unwrap();
    println!(
        "CRITERION 9 determinism: {} — identical seeds reproduce records and reports byte-for-byte across all sequences",
        verdict(ok)
    );
    assert!(ok);

    // keep the Box-Muller entry point under observation: the determinism
    // guarantee depends on the generator's draw order staying fixed
    let mut ra = shot_rng(1, 0);
    let mut rb = shot_rng(1, 0);
    assert_eq!(standard_normal(&mut ra), standard_normal(&mut rb));
}
