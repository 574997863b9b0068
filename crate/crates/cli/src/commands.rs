//! One function per subcommand. Each writes its payload through
//! [`Outputs`]; non-fatal failures (a spectrum that would not fit) are
//! collected in [`Run::errors`] and still fail the command with exit code 2.

use std::io::BufReader;
use std::path::Path;

use erspec::analysis::{detect_with, estimate_noise, fit_emg, histogram, Detection, DetectorSettings, DwellRecord};
use erspec::ctmc::{simulate as simulate_log, Transition};
use erspec::seeds::{stream, PointSeeds};
use erspec::signal::{self, CurrentTrace};
use erspec::spectroscopy::{
    fit_lorentzian, rates_from_detection, run_cw_scan, run_persistence_scan, run_pulsed_scan,
    run_resonant_fraction_scan, run_sweep_rates, run_two_pulse_reset, FitOutcome, LorentzianFit, ProtocolResult,
    SpectrumPoint,
};
use serde::{Deserialize, Serialize};

use crate::config::{Protocol, RunConfig};
use crate::error::{CliError, Result};
use crate::output::{slug, CsvTable, Manifest, Outputs};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, clap::ValueEnum)]
pub enum TraceFormat {
    #[default]
    Csv,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum FitKind {
    /// Dwell lists from `erspec detect` (a directory).
    Rates,
    /// `detuning_hz,nu_i_hz,stderr_hz` CSV.
    Spectrum,
    /// One-column CSV of switch times in seconds.
    Emg,
}

pub struct Run {
    pub config: RunConfig,
    pub format: TraceFormat,
    pub out: Outputs,
    pub warnings: Vec<String>,
    pub errors: Vec<CliError>,
}

pub const TRACE_CSV: &str = "trace.csv";
pub const TRACE_BIN: &str = "trace.bin";
pub const DWELL_IONISATION: &str = "dwell_ionisation.csv";
pub const DWELL_RESET: &str = "dwell_reset.csv";
pub const DETECTION: &str = "detection.json";

pub fn protocol(run: &mut Run, p: Protocol) -> Result<()> {
    match p {
        Protocol::Simulate => simulate(run),
        Protocol::ScanCw => protocol_result(run, |c| run_cw_scan(&c.physics, &c.cw_scan, c.seed)),
        Protocol::ScanPulsed => protocol_result(run, |c| run_pulsed_scan(&c.physics, &c.pulsed_scan, c.seed)),
        Protocol::ResetRate => protocol_result(run, |c| run_two_pulse_reset(&c.physics, &c.reset_rate, c.seed)),
        Protocol::Persistence => protocol_result(run, |c| run_persistence_scan(&c.physics, &c.persistence, c.seed)),
        Protocol::Fraction => protocol_result(run, |c| run_resonant_fraction_scan(&c.physics, &c.fraction, c.seed)),
        Protocol::SweepRates => protocol_result(run, |c| run_sweep_rates(&c.sweep, c.seed)),
    }
}

#[derive(Debug, Serialize)]
struct SimulationInfo {
    duration_s: f64,
    events: usize,
    ionisations: usize,
    resets: usize,
    samples: usize,
    sample_rate_hz: f64,
    start_time_s: f64,
}

fn transition_name(t: Transition) -> &'static str {
    match t {
        Transition::Excite => "excite",
        Transition::DecayNonIonising => "decay_non_ionising",
        Transition::DecayIonising => "decay_ionising",
        Transition::Reset => "reset",
    }
}

/// Event log and current trace for one drive. Seeds are those of point
/// (0, 0) of a CW scan, so `simulate | detect | fit` reproduces that point.
pub fn simulate(run: &mut Run) -> Result<()> {
    let c = &run.config;
    let seeds = PointSeeds::new(c.seed, stream::CW_SCAN, 0, 0);
    let log = simulate_log(&c.physics.rates, &c.physics.diffusion, &c.simulate.drive(), seeds.simulation)?;
    let trace = signal::synthesize(&log, &c.physics.trace, seeds.noise)?;
    let mut bytes = Vec::new();
    let name = match run.format {
        TraceFormat::Csv => {
            signal::write_csv(&trace, &mut bytes)?;
            TRACE_CSV
        }
        TraceFormat::Binary => {
            signal::write_binary(&trace, &mut bytes)?;
            TRACE_BIN
        }
    };
    run.out.write(name, &bytes)?;
    if c.simulate.write_events {
        let rows: Vec<Vec<String>> = log
            .events
            .iter()
            .map(|e| vec![e.time.to_string(), transition_name(e.transition).to_string()])
            .collect();
        run.out.write_records("events.csv", &["time_s", "transition"], &rows)?;
    }
    let info = SimulationInfo {
        duration_s: log.duration,
        events: log.events.len(),
        ionisations: log.count(Transition::DecayIonising),
        resets: log.count(Transition::Reset),
        samples: trace.len(),
        sample_rate_hz: trace.params.sample_rate_hz,
        start_time_s: trace.start_time,
    };
    run.out.write_json("simulation.json", &info)
}

/// Reads a trace written by `simulate`, in either format.
pub fn read_trace(path: &Path, params: &signal::TraceParams) -> Result<CurrentTrace> {
    let bytes = std::fs::read(path).map_err(|e| CliError::unreadable(path, e))?;
    let parsed = if bytes.starts_with(b"ERTR") {
        signal::read_binary(&bytes[..], params)
    } else {
        signal::read_csv(BufReader::new(&bytes[..]), params)
    };
    parsed.map_err(|e| match e {
        erspec::Error::Domain { field, message } => CliError::invalid(format!("physics.trace.{field}"), message),
        other => CliError::Input {
            path: path.display().to_string(),
            message: other.to_string(),
        },
    })
}

/// What `fit --kind rates` needs from a detection besides the dwells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionInfo {
    pub threshold: f64,
    pub hysteresis: f64,
    pub resolution_s: f64,
    pub excluded: usize,
    pub edges: usize,
    pub noise_sigma_estimate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

pub fn detect(run: &mut Run, input: &Path) -> Result<()> {
    let c = &run.config;
    let trace = read_trace(input, &c.physics.trace)?;
    let (settings, warning) = c.detect.detector().settings(&trace);
    let det = detect_with(&trace, &settings)?;
    let warning = warning.or(det.warning.clone());
    if let Some(w) = &warning {
        run.warnings.push(w.clone());
    }
    let edges: Vec<Vec<f64>> = det
        .edges
        .iter()
        .map(|e| vec![e.time, if e.rising { 1.0 } else { 0.0 }])
        .collect();
    run.out.write_table("edges.csv", &["time_s".into(), "rising".into()], &edges)?;
    let bin = c.detect.histogram_bin_s;
    for (name, hist, dwells) in [
        (DWELL_IONISATION, "histogram_ionisation.csv", &det.record.t_i),
        (DWELL_RESET, "histogram_reset.csv", &det.record.t_r),
    ] {
        let rows: Vec<Vec<f64>> = dwells.iter().map(|&d| vec![d]).collect();
        run.out.write_table(name, &["dwell_s".into()], &rows)?;
        if dwells.is_empty() {
            run.warnings.push(format!("{name}: no dwells; histogram skipped"));
            continue;
        }
        let width = bin.unwrap_or_else(|| dwells.iter().sum::<f64>() / dwells.len() as f64 / 10.0);
        let rows: Vec<Vec<f64>> = histogram(dwells, width)?
            .into_iter()
            .map(|(x, n)| vec![x, n as f64])
            .collect();
        run.out.write_table(hist, &["bin_center_s".into(), "count".into()], &rows)?;
    }
    let info = DetectionInfo {
        threshold: settings.threshold,
        hysteresis: settings.hysteresis,
        resolution_s: settings.resolution,
        excluded: det.excluded,
        edges: det.edges.len(),
        noise_sigma_estimate: estimate_noise(&trace),
        warning,
    };
    run.out.write_json(DETECTION, &info)
}

/// Picks the fit from the input when `--kind` is absent.
pub fn infer_fit_kind(input: &Path) -> Result<FitKind> {
    if input.is_dir() {
        return Ok(FitKind::Rates);
    }
    let table = CsvTable::read(input)?;
    if table.columns.iter().any(|c| c == "detuning_hz") {
        Ok(FitKind::Spectrum)
    } else if table.columns.len() == 1 {
        Ok(FitKind::Emg)
    } else {
        Err(CliError::Input {
            path: input.display().to_string(),
            message: "cannot tell what to fit; pass --kind".into(),
        })
    }
}

pub fn fit(run: &mut Run, input: &Path, kind: Option<FitKind>) -> Result<()> {
    match kind.map_or_else(|| infer_fit_kind(input), Ok)? {
        FitKind::Rates => fit_rates(run, input),
        FitKind::Spectrum => fit_spectrum(run, input),
        FitKind::Emg => fit_switch_times(run, input),
    }
}

fn fit_rates(run: &mut Run, dir: &Path) -> Result<()> {
    let info_path = dir.join(DETECTION);
    let text = std::fs::read_to_string(&info_path).map_err(|e| CliError::unreadable(&info_path, e))?;
    let info: DetectionInfo = serde_json::from_str(&text).map_err(|e| CliError::Input {
        path: info_path.display().to_string(),
        message: e.to_string(),
    })?;
    let read = |name: &str| -> Result<Vec<f64>> {
        let p = dir.join(name);
        CsvTable::read(&p)?.require("dwell_s", &p)
    };
    let det = Detection {
        record: DwellRecord {
            t_i: read(DWELL_IONISATION)?,
            t_r: read(DWELL_RESET)?,
        },
        edges: Vec::new(),
        excluded: info.excluded,
        settings: DetectorSettings {
            threshold: info.threshold,
            hysteresis: info.hysteresis,
            resolution: info.resolution_s,
        },
        warning: None,
    };
    let rates = rates_from_detection(&det, run.config.detect.correct_missed_events)?;
    let rows = vec![
        vec![
            "nu_i".to_string(),
            rates.nu_i.rate.to_string(),
            rates.nu_i.stderr.to_string(),
            rates.nu_i.n.to_string(),
        ],
        vec![
            "nu_r".to_string(),
            rates.nu_r.rate.to_string(),
            rates.nu_r.stderr.to_string(),
            rates.nu_r.n.to_string(),
        ],
    ];
    run.out.write_records("rates.csv", &["quantity", "rate_hz", "stderr_hz", "n_dwells"], &rows)
}

const FIT_COLUMNS: [&str; 15] = [
    "label",
    "condition",
    "condition_value",
    "status",
    "center_hz",
    "center_stderr_hz",
    "fwhm_hz",
    "fwhm_stderr_hz",
    "amplitude_hz",
    "amplitude_stderr_hz",
    "offset_hz",
    "offset_stderr_hz",
    "chi2",
    "dof",
    "message",
];

fn fit_row(label: &str, condition: (&str, f64), fit: &FitOutcome) -> Vec<String> {
    let mut row = vec![label.to_string(), condition.0.to_string(), condition.1.to_string()];
    match fit {
        FitOutcome::Fitted(f) => {
            row.push("ok".into());
            let LorentzianFit {
                center,
                center_se,
                fwhm,
                fwhm_se,
                amplitude,
                amplitude_se,
                offset,
                offset_se,
                chi2,
                ..
            } = *f;
            for v in [center, center_se, fwhm, fwhm_se, amplitude, amplitude_se, offset, offset_se, chi2] {
                row.push(v.to_string());
            }
            row.push(f.dof.to_string());
            row.push(String::new());
        }
        FitOutcome::Failed(e) => {
            row.push("failed".into());
            row.extend(std::iter::repeat_n(String::new(), 10));
            row.push(e.to_string());
        }
    }
    row
}

fn fit_spectrum(run: &mut Run, path: &Path) -> Result<()> {
    let t = CsvTable::read(path)?;
    let (d, nu, se) = (
        t.require("detuning_hz", path)?,
        t.require("nu_i_hz", path)?,
        t.require("stderr_hz", path)?,
    );
    let points: Vec<SpectrumPoint> = (0..d.len()).map(|i| SpectrumPoint::new(d[i], nu[i], se[i])).collect();
    let outcome = FitOutcome::from(fit_lorentzian(&points));
    let label = path.file_stem().map_or("spectrum".into(), |s| s.to_string_lossy().into_owned());
    run.out
        .write_records("fit.csv", &FIT_COLUMNS, &[fit_row(&label, ("", f64::NAN), &outcome)])?;
    if let FitOutcome::Failed(e) = outcome {
        run.errors.push(CliError::Fit {
            label,
            message: e.to_string(),
        });
    }
    Ok(())
}

fn fit_switch_times(run: &mut Run, path: &Path) -> Result<()> {
    let t = CsvTable::read(path)?;
    let xs: Vec<f64> = t.rows.iter().map(|r| r[0]).collect();
    let f = fit_emg(&xs)?;
    let rows: Vec<Vec<String>> = [
        ("mu", f.mu, f.mu_se, "s"),
        ("sigma", f.sigma, f.sigma_se, "s"),
        ("tau", f.tau, f.tau_se, "s"),
        ("gaussian_mu", f.gaussian.mu, f64::NAN, "s"),
        ("gaussian_sigma", f.gaussian.sigma, f64::NAN, "s"),
        ("aic_advantage", f.aic_advantage(), f64::NAN, "1"),
    ]
    .iter()
    .map(|(n, v, s, u)| vec![n.to_string(), v.to_string(), s.to_string(), u.to_string()])
    .collect();
    run.out.write_records("emg.csv", &["parameter", "value", "stderr", "unit"], &rows)?;
    if !f.prefers_emg() {
        run.warnings.push("model comparison prefers a pure Gaussian".into());
    }
    Ok(())
}

fn protocol_result(run: &mut Run, f: impl FnOnce(&RunConfig) -> erspec::Result<ProtocolResult>) -> Result<()> {
    let r = f(&run.config)?;
    write_result(run, &r)
}

/// Spectra, fits, tables and summaries of a protocol run.
pub fn write_result(run: &mut Run, r: &ProtocolResult) -> Result<()> {
    let mut fits = Vec::new();
    for (i, s) in r.spectra.iter().enumerate() {
        let rows: Vec<Vec<f64>> = s.points.iter().map(|p| vec![p.detuning_hz, p.nu_i_hz, p.stderr_hz]).collect();
        run.out.write_table(
            &format!("spectra/{i:02}_{}.csv", slug(&s.label)),
            &["detuning_hz".into(), "nu_i_hz".into(), "stderr_hz".into()],
            &rows,
        )?;
        fits.push(fit_row(&s.label, (&s.condition.0, s.condition.1), &s.fit));
        if let FitOutcome::Failed(e) = &s.fit {
            run.errors.push(CliError::Fit {
                label: s.label.clone(),
                message: e.to_string(),
            });
        }
    }
    if !r.spectra.is_empty() {
        run.out.write_records("fits.csv", &FIT_COLUMNS, &fits)?;
    }
    for t in &r.tables {
        run.out.write_table(&format!("tables/{}.csv", slug(&t.name)), &t.columns, &t.rows)?;
    }
    let summaries: Vec<Vec<String>> = r
        .summaries
        .iter()
        .map(|s| vec![s.name.clone(), s.value.to_string(), s.stderr.to_string(), s.unit.clone()])
        .collect();
    run.out.write_records("summaries.csv", &["name", "value", "stderr", "unit"], &summaries)?;
    run.warnings.extend(r.warnings.iter().cloned());
    Ok(())
}

/// Markdown digest of a finished run directory.
pub fn report(run: &mut Run, dir: &Path) -> Result<String> {
    let m = Manifest::read(dir)?;
    let tampered = m.verify(dir);
    let mut md = format!("# erspec {} run\n\n", m.command);
    md += &format!("- status: {} (exit code {})\n", m.status, m.exit_code);
    md += &format!("- master seed: {} ({})\n", m.master_seed, m.seed_scheme);
    md += &format!("- started {}, finished {}\n", m.started_at, m.finished_at);
    md += &format!("- files: {}, ", m.files.len());
    if tampered.is_empty() {
        md += "all hashes match\n";
    } else {
        md += &format!("MODIFIED since the run: {}\n", tampered.join(", "));
        run.warnings.push(format!("{} file(s) modified since the run", tampered.len()));
    }
    let summaries = dir.join("summaries.csv");
    if summaries.exists() {
        md += "\n## Summaries\n\n| name | value | stderr | unit |\n|---|---|---|---|\n";
        let mut r = csv::Reader::from_path(&summaries).map_err(|e| CliError::Input {
            path: summaries.display().to_string(),
            message: e.to_string(),
        })?;
        for rec in r.records().flatten() {
            let num = |i: usize| rec.get(i).and_then(|s| s.parse::<f64>().ok()).map_or("-".into(), |v| format!("{v:.6e}"));
            md += &format!("| {} | {} | {} | {} |\n", &rec[0], num(1), num(2), &rec[3]);
        }
    }
    let fits = dir.join("fits.csv");
    if fits.exists() {
        md += "\n## Lorentzian fits\n\n| spectrum | FWHM (MHz) | peak (Hz) | status |\n|---|---|---|---|\n";
        let mut r = csv::Reader::from_path(&fits).map_err(|e| CliError::Input {
            path: fits.display().to_string(),
            message: e.to_string(),
        })?;
        for rec in r.records().flatten() {
            let pm = |v: usize, s: usize, scale: f64| match (rec[v].parse::<f64>(), rec[s].parse::<f64>()) {
                (Ok(v), Ok(s)) => format!("{:.3} ± {:.3}", v / scale, s / scale),
                _ => "-".into(),
            };
            let status = if &rec[3] == "ok" { "ok".to_string() } else { rec[14].to_string() };
            md += &format!("| {} | {} | {} | {} |\n", &rec[0], pm(6, 7, 1e6), pm(8, 9, 1.0), status);
        }
    }
    if !m.warnings.is_empty() {
        md += &format!("\n## Warnings ({})\n\n", m.warnings.len());
        for w in m.warnings.iter().take(20) {
            md += &format!("- {w}\n");
        }
    }
    if !m.errors.is_empty() {
        md += "\n## Errors\n\n";
        for e in &m.errors {
            md += &format!("- [{}] {}\n", e.kind, e.message);
        }
    }
    run.out.write("report.md", md.as_bytes())?;
    Ok(md)
}

/// Default configuration as a commented TOML file.
pub fn defaults_toml() -> Result<String> {
    let body = RunConfig::default().to_toml()?;
    Ok(format!(
        "# erspec run configuration, schema version {}.\n\
         # Units are in the key names: _hz, _uw (microwatt), _s, _hz_per_uw.\n\
         # Any key may be omitted; omitted keys take these values.\n\n{body}",
        crate::config::SCHEMA_VERSION
    ))
}
