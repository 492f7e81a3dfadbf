use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use spinclock::config::{parse_config, ExperimentConfig, SequenceKind};
use spinclock::records::{read_records, write_records, ShotRecord};
use spinclock::report::{report, simulate, tables_to_csv, RunManifest, SimOutput};
use spinclock::selftest::{all_passed, selftest};
use spinclock::Error;

#[derive(Parser)]
#[command(
    name = "spinclock",
    version,
    about = "Monte Carlo simulator and analysis pipeline for a spin-squeezed atomic fountain clock"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the configured sequence, write records and a manifest sidecar.
    Simulate {
        /// JSON configuration file; defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the configured random seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Record output path (NDJSON, one shot per line).
        #[arg(long, default_value = "records.ndjson")]
        out: PathBuf,
        /// Also write the analysis report (CSV) to this path.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Confidence level of the stability intervals.
        #[arg(long, default_value_t = 0.68)]
        confidence: f64,
    },
    /// Recompute the analysis report from a stored record file.
    Report {
        /// JSON configuration file the records were produced with.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Record file written by `simulate` (not available for Rabi scans,
        /// which store no per-shot records).
        #[arg(long)]
        records: PathBuf,
        /// Report output path (CSV); stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Confidence level of the stability intervals.
        #[arg(long, default_value_t = 0.68)]
        confidence: f64,
    },
    /// Run the built-in diagnostic checks.
    Selftest,
}

fn load_config(path: &Option<PathBuf>, seed: Option<u64>) -> spinclock::Result<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => parse_config(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn write_text(path: &Path, text: &str) -> spinclock::Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn cmd_simulate(
    config: Option<PathBuf>,
    seed: Option<u64>,
    out: PathBuf,
    report_path: Option<PathBuf>,
    confidence: f64,
) -> spinclock::Result<()> {
    let cfg = load_config(&config, seed)?;
    let started = chrono::Utc::now().to_rfc3339();
    let mut output = simulate(&cfg)?;

    let records: Vec<ShotRecord> = output.all_records().into_iter().cloned().collect();
    if let SimOutput::RabiScan(scan) = &output {
        // no per-shot records; store the reduced scan as NDJSON pairs
        let lines: Vec<String> = scan
            .iter()
            .map(|p| serde_json::to_string(p))
            .collect::<Result<_, _>>()?;
        write_text(&out, &(lines.join("\n") + "\n"))?;
    } else {
        write_records(&out, &records)?;
    }
    let finished = chrono::Utc::now().to_rfc3339();

    let manifest = RunManifest {
        config_sha256: cfg.hash_hex(),
        seed: cfg.seed,
        shots_written: records.len() as u64,
        records_path: out.display().to_string(),
        started_utc: started,
        finished_utc: finished,
        tool_version: env!("CARGO_PKG_VERSION").into(),
        config: cfg.clone(),
    };
    write_text(&manifest_path(&out), &manifest.to_json_pretty())?;

    let tables = report(&cfg, &mut output, confidence)?;
    let csv = tables_to_csv(&tables);
    match report_path {
        Some(p) => write_text(&p, &csv)?,
        None => print!("{csv}"),
    }
    eprintln!(
        "wrote {} records to {} (manifest alongside)",
        records.len(),
        out.display()
    );
    Ok(())
}

fn cmd_report(
    config: Option<PathBuf>,
    records_path: PathBuf,
    out: Option<PathBuf>,
    confidence: f64,
) -> spinclock::Result<()> {
    let cfg = load_config(&config, None)?;
    let records = read_records(&records_path)?;
    let mut output = match cfg.sequence {
        SequenceKind::DynamicRange => {
            // records carry their set tip angle; regroup in file order
            let mut groups: Vec<(f64, Vec<ShotRecord>)> = Vec::new();
            for r in records {
                let theta = r.theta_true.ok_or_else(|| {
                    Error::Invalid("dynamic range record is missing its tip angle".into())
                })?;
                match groups.last_mut() {
                    Some((t, g)) if *t == theta => g.push(r),
                    _ => groups.push((theta, vec![r])),
                }
            }
            SimOutput::AngleScan(groups)
        }
        SequenceKind::RabiScan => {
            return Err(Error::Invalid(
                "rabi scans store no per-shot records; use simulate --report".into(),
            ))
        }
        _ => SimOutput::Shots(records),
    };
    let tables = report(&cfg, &mut output, confidence)?;
    let csv = tables_to_csv(&tables);
    match out {
        Some(p) => write_text(&p, &csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), i32> {
    let outcome = match cli.cmd {
        Cmd::Simulate { config, seed, out, report, confidence } => {
            cmd_simulate(config, seed, out, report, confidence)
        }
        Cmd::Report { config, records, out, confidence } => {
            cmd_report(config, records, out, confidence)
        }
        Cmd::Selftest => {
            let outcomes = selftest();
            for c in &outcomes {
                println!(
                    "{} {} — {}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.detail
                );
            }
            if all_passed(&outcomes) {
                println!("selftest: {} checks passed", outcomes.len());
                return Ok(());
            }
            return Err(3);
        }
    };
    outcome.map_err(|e| {
        eprintln!("error: {e}");
        match e {
            Error::Config(_) => 2,
            _ => 1,
        }
    })
}

fn main() {
    let cli = Cli::parse();
    std::process::exit(match run(cli) {
        Ok(()) => 0,
        Err(code) => code,
    });
}
