use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ensure_list, DetuningGrid, Physics};
use crate::analysis::{
    correct_missed_events, default_resolution, detect_with, estimate_noise, fit_exponential, CorrectedRates,
    Detection, DetectorSettings, RateEstimate, DEFAULT_HYSTERESIS_SIGMAS,
};
use crate::ctmc::{simulate, LaserDrive, DEFAULT_RESONANT_FRACTION};
use crate::error::{ensure, Result};
use crate::seeds::{stream, PointSeeds};
use crate::signal::{synthesize, CurrentTrace};
use crate::spectroscopy::lorentz::SpectrumPoint;
use crate::spectroscopy::power::predicted_linewidth;
use crate::spectroscopy::result::{ProtocolResult, Spectrum, Summary, Table};
use crate::stats;

/// How dwell times are obtained at each CW point.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CwMode {
    /// Synthesize the current trace and detect switches in it.
    #[default]
    Trace,
    /// Read exact dwell times off the event log.
    Events,
}

/// Detector overrides; unset fields use [`DetectorSettings::auto`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    pub threshold: Option<f64>,
    pub hysteresis: Option<f64>,
    pub resolution_s: Option<f64>,
    /// Undo the bias from dwells shorter than the resolution.
    pub correct_missed_events: bool,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            threshold: None,
            hysteresis: None,
            resolution_s: None,
            correct_missed_events: true,
        }
    }
}

impl DetectorConfig {
    pub fn settings(&self, trace: &CurrentTrace) -> (DetectorSettings, Option<String>) {
        let (auto, mut warning) = DetectorSettings::auto(trace);
        let threshold = self.threshold.unwrap_or(auto.threshold);
        let hysteresis = match self.hysteresis {
            Some(h) => {
                warning = None;
                h
            }
            None if self.threshold.is_some() => {
                // Re-cap against the user threshold.
                let p = &trace.params;
                let room = (threshold - p.level_low).min(p.level_high - threshold);
                (DEFAULT_HYSTERESIS_SIGMAS * estimate_noise(trace)).min(0.9 * room)
            }
            None => auto.hysteresis,
        };
        let resolution = self
            .resolution_s
            .unwrap_or_else(|| default_resolution(trace, threshold, hysteresis));
        (
            DetectorSettings {
                threshold,
                hysteresis,
                resolution,
            },
            warning,
        )
    }
}

/// Rates from a detection, corrected for missed events when asked.
pub fn rates_from_detection(det: &Detection, correct: bool) -> Result<CorrectedRates> {
    if correct && det.settings.resolution > 0.0 {
        correct_missed_events(&det.record.t_i, &det.record.t_r, det.settings.resolution)
    } else {
        Ok(CorrectedRates {
            nu_i: fit_exponential(&det.record.t_i)?,
            nu_r: fit_exponential(&det.record.t_r)?,
            iterations: 0,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CwPoint {
    pub nu_i: RateEstimate,
    pub nu_r: RateEstimate,
    /// Dwells merged away by the resolution (trace mode).
    pub excluded: usize,
    pub resolution_s: f64,
    pub warning: Option<String>,
}

/// One CW measurement: simulate for `duration`, then estimate both rates.
#[allow(clippy::too_many_arguments)]
pub fn cw_point(
    physics: &Physics,
    power: f64,
    alpha: f64,
    detuning: f64,
    duration: f64,
    mode: CwMode,
    detector: &DetectorConfig,
    seeds: PointSeeds,
) -> Result<CwPoint> {
    let drive = LaserDrive::cw(duration, power, alpha, detuning);
    let log = simulate(&physics.rates, &physics.diffusion, &drive, seeds.simulation)?;
    match mode {
        CwMode::Events => {
            let rec = log.dwell_times();
            Ok(CwPoint {
                nu_i: fit_exponential(&rec.t_i)?,
                nu_r: fit_exponential(&rec.t_r)?,
                excluded: 0,
                resolution_s: 0.0,
                warning: None,
            })
        }
        CwMode::Trace => {
            let trace = synthesize(&log, &physics.trace, seeds.noise)?;
            let (settings, warning) = detector.settings(&trace);
            let det = detect_with(&trace, &settings)?;
            let rates = rates_from_detection(&det, detector.correct_missed_events)?;
            Ok(CwPoint {
                nu_i: rates.nu_i,
                nu_r: rates.nu_r,
                excluded: det.excluded,
                resolution_s: settings.resolution,
                warning: warning.or(det.warning),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CwScanConfig {
    pub powers_uw: Vec<f64>,
    pub resonant_fraction: f64,
    pub duration_s: f64,
    pub detuning: DetuningGrid,
    pub mode: CwMode,
    pub detector: DetectorConfig,
}

impl Default for CwScanConfig {
    fn default() -> Self {
        Self {
            powers_uw: vec![0.08, 0.16, 0.33, 0.6, 1.1],
            resonant_fraction: DEFAULT_RESONANT_FRACTION,
            duration_s: 20.0,
            detuning: DetuningGrid::default(),
            mode: CwMode::Trace,
            detector: DetectorConfig::default(),
        }
    }
}

impl CwScanConfig {
    pub fn validate(&self) -> Result<()> {
        ensure_list(&self.powers_uw, "powers_uw", |p| p > 0.0 && p.is_finite(), "must be positive")?;
        ensure((0.0..=1.0).contains(&self.resonant_fraction), "resonant_fraction", || {
            format!("resonant_fraction must be in [0,1], got {}", self.resonant_fraction)
        })?;
        ensure(self.duration_s > 0.0, "duration_s", || {
            format!("must be positive, got {}", self.duration_s)
        })?;
        self.detuning.validate().map_err(|e| e.within("detuning"))
    }
}

pub const CW_POINT_COLUMNS: [&str; 9] = [
    "power_uw",
    "detuning_hz",
    "nu_i_hz",
    "nu_i_stderr_hz",
    "n_ionisations",
    "nu_r_hz",
    "nu_r_stderr_hz",
    "n_resets",
    "excluded",
];

/// Spectra at each power, Lorentzian fits, and linear regressions of the
/// peak ionisation rate and of the reset rate against power.
pub fn run_cw_scan(physics: &Physics, cfg: &CwScanConfig, master_seed: u64) -> Result<ProtocolResult> {
    physics.validate().map_err(|e| e.within("physics"))?;
    cfg.validate().map_err(|e| e.within("cw_scan"))?;
    let mut out = ProtocolResult::new("scan-cw", master_seed);
    let mut points_table = Table::new("points", &CW_POINT_COLUMNS);
    let mut lines = Table::new(
        "linewidths",
        &[
            "power_uw",
            "fwhm_hz",
            "fwhm_stderr_hz",
            "peak_nu_i_hz",
            "peak_nu_i_stderr_hz",
            "nu_r_hz",
            "nu_r_stderr_hz",
        ],
    );
    let alpha = cfg.resonant_fraction;
    for (ci, &power) in cfg.powers_uw.iter().enumerate() {
        let expected = if alpha > 0.0 {
            predicted_linewidth(power, alpha, &physics.rates, &physics.diffusion, None)?
        } else {
            physics.rates.homogeneous_fwhm
        };
        let detunings = cfg.detuning.values(expected);
        let results: Vec<Result<CwPoint>> = detunings
            .par_iter()
            .enumerate()
            .map(|(j, &d)| {
                let seeds = PointSeeds::new(master_seed, stream::CW_SCAN, ci as u64, j as u64);
                cw_point(physics, power, alpha, d, cfg.duration_s, cfg.mode, &cfg.detector, seeds)
            })
            .collect();
        let mut spectrum = Vec::new();
        let mut resets = Vec::new();
        for (&d, res) in detunings.iter().zip(results) {
            match res {
                Ok(p) => {
                    if let Some(w) = &p.warning {
                        out.warnings.push(format!("power {power} uW, detuning {d} Hz: {w}"));
                    }
                    spectrum.push(SpectrumPoint::new(d, p.nu_i.rate, p.nu_i.stderr));
                    resets.push((p.nu_r.rate, p.nu_r.stderr));
                    points_table.push(vec![
                        power,
                        d,
                        p.nu_i.rate,
                        p.nu_i.stderr,
                        p.nu_i.n as f64,
                        p.nu_r.rate,
                        p.nu_r.stderr,
                        p.nu_r.n as f64,
                        p.excluded as f64,
                    ]);
                }
                Err(e) => out
                    .warnings
                    .push(format!("power {power} uW, detuning {d} Hz: point dropped: {e}")),
            }
        }
        let (rates, ses): (Vec<f64>, Vec<f64>) = resets.into_iter().unzip();
        let nu_r = stats::weighted_mean(&rates, &ses).unwrap_or((f64::NAN, f64::NAN));
        let s = Spectrum::fitted(format!("P={power}uW"), ("power_uw".into(), power), spectrum);
        match s.fit.fitted() {
            Some(f) => lines.push(vec![power, f.fwhm, f.fwhm_se, f.amplitude, f.amplitude_se, nu_r.0, nu_r.1]),
            None => out.warnings.push(format!("power {power} uW: Lorentzian fit failed")),
        }
        out.spectra.push(s);
    }
    regressions(&mut out, &lines);
    out.tables.push(lines);
    out.tables.push(points_table);
    Ok(out)
}

fn regressions(out: &mut ProtocolResult, lines: &Table) {
    let col = |n: &str| lines.column(n).unwrap_or_default();
    let p = col("power_uw");
    let mut fit = |y: &str, se: &str, what: &str| match stats::fit_line(&p, &col(y), Some(&col(se))) {
        Ok(f) => {
            out.summaries.push(Summary::new(&format!("{what}_slope"), f.slope, f.slope_se, "Hz/uW"));
            out.summaries.push(Summary::new(&format!("{what}_intercept"), f.intercept, f.intercept_se, "Hz"));
        }
        Err(e) => out.warnings.push(format!("{what} regression failed: {e}")),
    };
    fit("peak_nu_i_hz", "peak_nu_i_stderr_hz", "peak_nu_i");
    fit("nu_r_hz", "nu_r_stderr_hz", "nu_r");
    let widths: Vec<(f64, f64)> = col("fwhm_hz").into_iter().zip(col("fwhm_stderr_hz")).collect();
    if widths.len() >= 2 {
        out.summaries.push(Summary::new("fwhm_max_pairwise_z", super::max_pairwise_z(&widths), 0.0, "1"));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctmc::DiffusionParams;

    #[test]
    fn trace_and_event_modes_agree_at_one_point() {
        let physics = Physics {
            diffusion: DiffusionParams::disabled(),
            ..Physics::default()
        };
        let rates = physics.rates.tuned_to(294.0, 929.0, 1.0, 0.5).unwrap();
        let physics = Physics { rates, ..physics };
        let seeds = PointSeeds::new(5, stream::CW_SCAN, 0, 0);
        let det = DetectorConfig::default();
        let ev = cw_point(&physics, 1.0, 0.5, 0.0, 20.0, CwMode::Events, &det, seeds).unwrap();
        let tr = cw_point(&physics, 1.0, 0.5, 0.0, 20.0, CwMode::Trace, &det, seeds).unwrap();
        for (a, b) in [(ev.nu_i, tr.nu_i), (ev.nu_r, tr.nu_r)] {
            assert!((a.rate - b.rate).abs() < 3.0 * b.stderr, "{a:?} {b:?}");
        }
        assert!(tr.excluded > 0);
    }

    #[test]
    fn rejects_bad_fraction() {
        let cfg = CwScanConfig {
            resonant_fraction: 1.3,
            ..CwScanConfig::default()
        };
        let e = run_cw_scan(&Physics::default(), &cfg, 1).unwrap_err().to_string();
        assert!(e.contains("cw_scan.resonant_fraction"), "{e}");
        assert!(e.contains("resonant_fraction must be in [0,1]"), "{e}");
    }
}
