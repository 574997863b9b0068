use serde::{Deserialize, Serialize};

use super::pulsed::{push_linewidth, LINEWIDTH_COLUMNS};
use super::{ensure_list, max_pairwise_z, pulsed_spectrum, DetuningGrid, Physics, PulseTiming, ResetSource, POINT_COLUMNS};
use crate::ctmc::{DriveSegment, DEFAULT_RESONANT_FRACTION};
use crate::error::{ensure, Result};
use crate::seeds::{stream, PointSeeds};
use crate::spectroscopy::power::predicted_linewidth;
use crate::spectroscopy::result::{ProtocolResult, Spectrum, Summary, Table};
use crate::stats;

/// Strong off-resonance pulse, delay `t_w`, then a resonant probe pulse whose
/// spectrum is recorded. `timing.pulse_s` is the probe length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PersistenceConfig {
    pub strong_power_uw: f64,
    pub strong_duration_s: f64,
    pub strong_resonant_fraction: f64,
    pub delays_s: Vec<f64>,
    pub probe_power_uw: f64,
    pub probe_resonant_fraction: f64,
    pub timing: PulseTiming,
    pub detuning: DetuningGrid,
    pub reset: ResetSource,
}

impl Default for PersistenceConfig {
    fn default() -> Self {
        Self {
            strong_power_uw: 375.0,
            strong_duration_s: 10e-6,
            strong_resonant_fraction: 0.0,
            delays_s: vec![50e-9, 200e-9, 1e-6, 3e-6, 10e-6],
            probe_power_uw: 9.0,
            probe_resonant_fraction: DEFAULT_RESONANT_FRACTION,
            timing: PulseTiming::default(),
            detuning: DetuningGrid::default(),
            reset: ResetSource::default(),
        }
    }
}

impl PersistenceConfig {
    pub fn validate(&self) -> Result<()> {
        ensure(self.strong_power_uw >= 0.0, "strong_power_uw", || "must be non-negative".into())?;
        ensure(self.strong_duration_s > 0.0, "strong_duration_s", || "must be positive".into())?;
        ensure((0.0..=1.0).contains(&self.strong_resonant_fraction), "strong_resonant_fraction", || {
            format!("resonant_fraction must be in [0,1], got {}", self.strong_resonant_fraction)
        })?;
        ensure_list(&self.delays_s, "delays_s", |d| d > 0.0 && d.is_finite(), "must be positive")?;
        ensure(self.probe_power_uw > 0.0, "probe_power_uw", || "must be positive".into())?;
        ensure(
            self.probe_resonant_fraction > 0.0 && self.probe_resonant_fraction <= 1.0,
            "probe_resonant_fraction",
            || format!("resonant_fraction must be in (0,1], got {}", self.probe_resonant_fraction),
        )?;
        self.timing.validate().map_err(|e| e.within("timing"))?;
        self.detuning.validate().map_err(|e| e.within("detuning"))?;
        self.reset.validate().map_err(|e| e.within("reset"))
    }
}

/// Probe spectra for each delay after the strong pulse, with the spread of
/// fitted linewidths across delays.
pub fn run_persistence_scan(physics: &Physics, cfg: &PersistenceConfig, master_seed: u64) -> Result<ProtocolResult> {
    physics.validate().map_err(|e| e.within("physics"))?;
    cfg.validate().map_err(|e| e.within("persistence"))?;
    let mut out = ProtocolResult::new("persistence", master_seed);
    let t = &cfg.timing;
    let probe = cfg.probe_power_uw;
    let alpha = cfg.probe_resonant_fraction;
    let nu_r = cfg.reset.rate(&physics.rates, probe);
    let predicted = predicted_linewidth(probe, alpha, &physics.rates, &physics.diffusion, Some(t.pulse_s))?;
    let detunings = cfg.detuning.values(predicted);
    let mut points = Table::new("points", &POINT_COLUMNS);
    points.columns[0] = "delay_s".into();
    let mut lines = Table::new("linewidths", &LINEWIDTH_COLUMNS);
    lines.columns[0] = "delay_s".into();
    for (ci, &delay) in cfg.delays_s.iter().enumerate() {
        let probe_end = cfg.strong_duration_s + delay + t.pulse_s;
        let layout = t.layout(&physics.trace, probe_end);
        let (pts, rows, warnings) = pulsed_spectrum(
            physics,
            &detunings,
            |d| {
                vec![
                    DriveSegment::new(cfg.strong_duration_s, cfg.strong_power_uw, cfg.strong_resonant_fraction, d),
                    DriveSegment::dark(delay),
                    DriveSegment::new(t.pulse_s, probe, alpha, d),
                    DriveSegment::dark(t.dark_s),
                ]
            },
            &layout,
            t.pulse_s,
            nu_r,
            |j| PointSeeds::new(master_seed, stream::PERSISTENCE, ci as u64, j as u64),
            delay,
            t.max_invalid_fraction,
        );
        out.warnings.extend(warnings);
        points.rows.extend(rows);
        let s = Spectrum::fitted(format!("t_w={delay}s"), ("delay_s".into(), delay), pts);
        push_linewidth(&mut out, &mut lines, &s, delay, predicted);
        out.spectra.push(s);
    }
    let col = |n: &str| lines.column(n).unwrap_or_default();
    let widths: Vec<(f64, f64)> = col("fwhm_hz").into_iter().zip(col("fwhm_stderr_hz")).collect();
    if widths.len() >= 2 {
        out.summaries.push(Summary::new("fwhm_max_pairwise_z", max_pairwise_z(&widths), 0.0, "1"));
        let w: Vec<f64> = widths.iter().map(|w| w.0).collect();
        let s: Vec<f64> = widths.iter().map(|w| w.1).collect();
        if let Some((m, se)) = stats::weighted_mean(&w, &s) {
            out.summaries.push(Summary::new("fwhm_mean", m, se, "Hz"));
        }
        // Trend of linewidth against log delay; negative when it narrows.
        let x: Vec<f64> = col("delay_s").iter().map(|d| d.log10()).collect();
        match stats::fit_line(&x, &w, Some(&s)) {
            Ok(f) => out
                .summaries
                .push(Summary::new("fwhm_slope_per_decade", f.slope, f.slope_se, "Hz")),
            Err(e) => out.warnings.push(format!("linewidth trend fit failed: {e}")),
        }
    }
    out.tables.push(lines);
    out.tables.push(points);
    Ok(out)
}
