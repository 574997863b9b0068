use serde::{Deserialize, Serialize};

use super::pulsed::{push_linewidth, LINEWIDTH_COLUMNS};
use super::{ensure_list, max_pairwise_z, pulsed_spectrum, DetuningGrid, Physics, PulseTiming, ResetSource, POINT_COLUMNS};
use crate::ctmc::DriveSegment;
use crate::error::{ensure, Result};
use crate::seeds::{stream, PointSeeds};
use crate::spectroscopy::power::predicted_linewidth;
use crate::spectroscopy::result::{ProtocolResult, Spectrum, Summary, Table};
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FractionScanConfig {
    pub power_uw: f64,
    pub resonant_fractions: Vec<f64>,
    pub timing: PulseTiming,
    pub detuning: DetuningGrid,
    pub reset: ResetSource,
}

impl Default for FractionScanConfig {
    fn default() -> Self {
        Self {
            power_uw: 41.0,
            resonant_fractions: vec![0.1, 0.2, 0.3, 0.4, 0.496],
            timing: PulseTiming::default(),
            detuning: DetuningGrid::default(),
            reset: ResetSource::default(),
        }
    }
}

impl FractionScanConfig {
    pub fn validate(&self) -> Result<()> {
        ensure(self.power_uw > 0.0, "power_uw", || format!("must be positive, got {}", self.power_uw))?;
        ensure_list(
            &self.resonant_fractions,
            "resonant_fractions",
            |a| (0.0..=1.0).contains(&a),
            "resonant_fraction must be in [0,1]",
        )?;
        self.timing.validate().map_err(|e| e.within("timing"))?;
        self.detuning.validate().map_err(|e| e.within("detuning"))?;
        self.reset.validate().map_err(|e| e.within("reset"))
    }
}

/// Pulsed spectra at fixed total power for each resonant fraction. Reports
/// the spread of the linewidths and a linear fit of the peak rate against
/// the fraction.
pub fn run_resonant_fraction_scan(
    physics: &Physics,
    cfg: &FractionScanConfig,
    master_seed: u64,
) -> Result<ProtocolResult> {
    physics.validate().map_err(|e| e.within("physics"))?;
    cfg.validate().map_err(|e| e.within("fraction"))?;
    let mut out = ProtocolResult::new("fraction", master_seed);
    let t = &cfg.timing;
    let layout = t.layout(&physics.trace, t.pulse_s);
    let power = cfg.power_uw;
    let nu_r = cfg.reset.rate(&physics.rates, power);
    let mut points = Table::new("points", &POINT_COLUMNS);
    points.columns[0] = "resonant_fraction".into();
    let mut lines = Table::new("linewidths", &LINEWIDTH_COLUMNS);
    lines.columns[0] = "resonant_fraction".into();
    // The broadening depends on total power only, so one grid serves all fractions.
    let predicted = predicted_linewidth(power, 1.0, &physics.rates, &physics.diffusion, Some(t.pulse_s))?;
    let detunings = cfg.detuning.values(predicted);
    for (ci, &alpha) in cfg.resonant_fractions.iter().enumerate() {
        let (pts, rows, warnings) = pulsed_spectrum(
            physics,
            &detunings,
            |d| vec![DriveSegment::new(t.pulse_s, power, alpha, d), DriveSegment::dark(t.dark_s)],
            &layout,
            t.pulse_s,
            nu_r,
            |j| PointSeeds::new(master_seed, stream::RESONANT_FRACTION, ci as u64, j as u64),
            alpha,
            t.max_invalid_fraction,
        );
        out.warnings.extend(warnings);
        points.rows.extend(rows);
        let s = Spectrum::fitted(format!("alpha={alpha}"), ("resonant_fraction".into(), alpha), pts);
        push_linewidth(&mut out, &mut lines, &s, alpha, predicted);
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
    }
    match stats::fit_line(
        &col("resonant_fraction"),
        &col("peak_nu_i_hz"),
        Some(&col("peak_nu_i_stderr_hz")),
    ) {
        Ok(f) => {
            out.summaries.push(Summary::new("peak_nu_i_slope", f.slope, f.slope_se, "Hz"));
            out.summaries.push(Summary::new("peak_nu_i_intercept", f.intercept, f.intercept_se, "Hz"));
            out.summaries.push(Summary::new("peak_nu_i_r_squared", f.r_squared, 0.0, "1"));
        }
        Err(e) => out.warnings.push(format!("peak rate regression failed: {e}")),
    }
    out.tables.push(lines);
    out.tables.push(points);
    Ok(out)
}
