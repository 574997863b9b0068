use serde::{Deserialize, Serialize};

use super::{ensure_list, pulsed_spectrum, CycleReadout, DetuningGrid, Physics, ResetSource, POINT_COLUMNS};
use crate::ctmc::{DriveSegment, DEFAULT_RESONANT_FRACTION};
use crate::error::{ensure, Result};
use crate::seeds::{stream, PointSeeds};
use crate::signal::TraceParams;
use crate::spectroscopy::power::predicted_linewidth;
use crate::spectroscopy::result::{ProtocolResult, Spectrum, Table};

/// Pulse/dark cycle timing and readout windows shared by the pulsed
/// protocols. Windows are in seconds; `pre_window_s` is relative to the
/// start of the cycle, the readout starts `readout_delay_s` after the
/// (last) excitation pulse ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PulseTiming {
    pub pulse_s: f64,
    pub dark_s: f64,
    pub cycles: u64,
    pub pre_window_s: (f64, f64),
    pub readout_delay_s: f64,
    pub readout_length_s: f64,
    /// Signed current change from the baseline that counts as a drop;
    /// defaults to minus half the level separation.
    pub threshold: Option<f64>,
    pub max_invalid_fraction: f64,
}

impl Default for PulseTiming {
    fn default() -> Self {
        Self {
            pulse_s: 4e-6,
            dark_s: 5e-3,
            cycles: 20_000,
            pre_window_s: (-50e-6, -5e-6),
            readout_delay_s: 10e-6,
            readout_length_s: 290e-6,
            threshold: None,
            max_invalid_fraction: 0.2,
        }
    }
}

impl PulseTiming {
    pub fn validate(&self) -> Result<()> {
        ensure(self.pulse_s > 0.0, "pulse_s", || format!("must be positive, got {}", self.pulse_s))?;
        ensure(self.dark_s > 0.0, "dark_s", || format!("must be positive, got {}", self.dark_s))?;
        ensure(self.cycles >= 1, "cycles", || "must be at least 1".into())?;
        let (a, b) = self.pre_window_s;
        ensure(a < b && b <= 0.0, "pre_window_s", || {
            format!("must be an increasing window before the cycle start, got ({a}, {b})")
        })?;
        ensure(self.readout_delay_s >= 0.0, "readout_delay_s", || "must be non-negative".into())?;
        ensure(self.readout_length_s > 0.0, "readout_length_s", || "must be positive".into())?;
        ensure(
            self.readout_delay_s + self.readout_length_s <= self.dark_s,
            "readout_length_s",
            || "readout must end within the dark period".into(),
        )?;
        ensure(-a <= self.dark_s, "pre_window_s", || "must start within the previous dark period".into())?;
        ensure(
            self.max_invalid_fraction >= 0.0 && self.max_invalid_fraction <= 1.0,
            "max_invalid_fraction",
            || "must be in [0, 1]".into(),
        )
    }

    pub(crate) fn layout(&self, trace: &TraceParams, excitation_end: f64) -> CycleReadout {
        let start = excitation_end + self.readout_delay_s;
        CycleReadout {
            cycles: self.cycles,
            pre: self.pre_window_s,
            readout: (start, start + self.readout_length_s),
            threshold: self.threshold.unwrap_or(-0.5 * trace.separation()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PulsedScanConfig {
    pub powers_uw: Vec<f64>,
    pub resonant_fraction: f64,
    pub timing: PulseTiming,
    pub detuning: DetuningGrid,
    pub reset: ResetSource,
}

impl Default for PulsedScanConfig {
    fn default() -> Self {
        Self {
            powers_uw: vec![5.8, 10.0, 20.0, 41.0, 61.0],
            resonant_fraction: DEFAULT_RESONANT_FRACTION,
            timing: PulseTiming::default(),
            detuning: DetuningGrid::default(),
            reset: ResetSource::default(),
        }
    }
}

impl PulsedScanConfig {
    pub fn validate(&self) -> Result<()> {
        ensure_list(&self.powers_uw, "powers_uw", |p| p > 0.0 && p.is_finite(), "must be positive")?;
        ensure(
            self.resonant_fraction > 0.0 && self.resonant_fraction <= 1.0,
            "resonant_fraction",
            || format!("resonant_fraction must be in (0,1], got {}", self.resonant_fraction),
        )?;
        self.timing.validate().map_err(|e| e.within("timing"))?;
        self.detuning.validate().map_err(|e| e.within("detuning"))?;
        self.reset.validate().map_err(|e| e.within("reset"))
    }
}

pub(crate) const LINEWIDTH_COLUMNS: [&str; 6] = [
    "condition",
    "fwhm_hz",
    "fwhm_stderr_hz",
    "peak_nu_i_hz",
    "peak_nu_i_stderr_hz",
    "predicted_fwhm_hz",
];

/// Pulsed spectra at each power: cycle classification, inversion of the
/// ionisation probability, Lorentzian fit; plus the linewidth-power table.
pub fn run_pulsed_scan(physics: &Physics, cfg: &PulsedScanConfig, master_seed: u64) -> Result<ProtocolResult> {
    physics.validate().map_err(|e| e.within("physics"))?;
    cfg.validate().map_err(|e| e.within("pulsed_scan"))?;
    let mut out = ProtocolResult::new("scan-pulsed", master_seed);
    let t = &cfg.timing;
    let layout = t.layout(&physics.trace, t.pulse_s);
    let alpha = cfg.resonant_fraction;
    let mut points = Table::new("points", &POINT_COLUMNS);
    points.columns[0] = "power_uw".into();
    let mut lines = Table::new("linewidths", &LINEWIDTH_COLUMNS);
    lines.columns[0] = "power_uw".into();
    for (ci, &power) in cfg.powers_uw.iter().enumerate() {
        let predicted = predicted_linewidth(power, alpha, &physics.rates, &physics.diffusion, Some(t.pulse_s))?;
        let detunings = cfg.detuning.values(predicted);
        let nu_r = cfg.reset.rate(&physics.rates, power);
        let (pts, rows, warnings) = pulsed_spectrum(
            physics,
            &detunings,
            |d| vec![DriveSegment::new(t.pulse_s, power, alpha, d), DriveSegment::dark(t.dark_s)],
            &layout,
            t.pulse_s,
            nu_r,
            |j| PointSeeds::new(master_seed, stream::PULSED_SCAN, ci as u64, j as u64),
            power,
            t.max_invalid_fraction,
        );
        out.warnings.extend(warnings);
        points.rows.extend(rows);
        let s = Spectrum::fitted(format!("P={power}uW"), ("power_uw".into(), power), pts);
        push_linewidth(&mut out, &mut lines, &s, power, predicted);
        out.spectra.push(s);
    }
    out.tables.push(lines);
    out.tables.push(points);
    Ok(out)
}

pub(crate) fn push_linewidth(out: &mut ProtocolResult, lines: &mut Table, s: &Spectrum, condition: f64, predicted: f64) {
    match s.fit.fitted() {
        Some(f) => lines.push(vec![condition, f.fwhm, f.fwhm_se, f.amplitude, f.amplitude_se, predicted]),
        None => out.warnings.push(format!("{}: Lorentzian fit failed", s.label)),
    }
}
