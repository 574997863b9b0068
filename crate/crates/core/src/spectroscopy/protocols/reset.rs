use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{binomial_stderr, ensure_list, run_cycles, Physics};
use crate::analysis::{classify_two_readouts, TwoReadoutCounts};
use crate::ctmc::{DriveSegment, DEFAULT_RESONANT_FRACTION};
use crate::error::{ensure, Result};
use crate::seeds::{stream, PointSeeds};
use crate::spectroscopy::result::{ProtocolResult, Summary, Table};
use crate::stats;

/// A resonant pulse ionises the trap, the first readout confirms it, an
/// off-resonance second pulse of length `L` drives the reset, and the second
/// readout tells whether the trap is still ionised.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResetConfig {
    pub first_power_uw: f64,
    pub first_resonant_fraction: f64,
    pub first_duration_s: f64,
    pub first_detuning_hz: f64,
    /// From the end of the first pulse to the start of the second.
    pub gap_s: f64,
    pub first_readout_delay_s: f64,
    pub first_readout_length_s: f64,
    pub second_readout_delay_s: f64,
    pub second_readout_length_s: f64,
    pub second_powers_uw: Vec<f64>,
    /// Number of second-pulse lengths per power, from 0 to
    /// `max_decays / nu_r(P)` with `nu_r` from the configured physics.
    pub lengths: usize,
    pub max_decays: f64,
    pub dark_s: f64,
    pub cycles: u64,
    pub pre_window_s: (f64, f64),
    pub threshold: Option<f64>,
}

impl Default for ResetConfig {
    fn default() -> Self {
        Self {
            first_power_uw: 10.0,
            first_resonant_fraction: DEFAULT_RESONANT_FRACTION,
            first_duration_s: 50e-6,
            first_detuning_hz: 0.0,
            gap_s: 300e-6,
            first_readout_delay_s: 10e-6,
            first_readout_length_s: 250e-6,
            second_readout_delay_s: 20e-6,
            second_readout_length_s: 100e-6,
            second_powers_uw: vec![0.0, 0.5, 1.5, 5.0, 15.0, 50.0],
            lengths: 6,
            max_decays: 2.5,
            dark_s: 20e-3,
            cycles: 4000,
            pre_window_s: (-50e-6, -5e-6),
            threshold: None,
        }
    }
}

impl ResetConfig {
    pub fn validate(&self) -> Result<()> {
        ensure(self.first_power_uw > 0.0, "first_power_uw", || "must be positive".into())?;
        ensure(
            self.first_resonant_fraction > 0.0 && self.first_resonant_fraction <= 1.0,
            "first_resonant_fraction",
            || format!("resonant_fraction must be in (0,1], got {}", self.first_resonant_fraction),
        )?;
        ensure(self.first_duration_s > 0.0, "first_duration_s", || "must be positive".into())?;
        ensure(self.gap_s > 0.0, "gap_s", || "must be positive".into())?;
        ensure(
            self.first_readout_delay_s >= 0.0
                && self.first_readout_length_s > 0.0
                && self.first_readout_delay_s + self.first_readout_length_s <= self.gap_s,
            "first_readout_length_s",
            || "first readout must fit inside the gap".into(),
        )?;
        ensure(
            self.second_readout_delay_s >= 0.0
                && self.second_readout_length_s > 0.0
                && self.second_readout_delay_s + self.second_readout_length_s <= self.dark_s,
            "second_readout_length_s",
            || "second readout must fit inside the dark period".into(),
        )?;
        ensure_list(&self.second_powers_uw, "second_powers_uw", |p| p >= 0.0 && p.is_finite(), "must be non-negative")?;
        ensure(self.lengths >= 2, "lengths", || "need at least two lengths".into())?;
        ensure(self.max_decays > 0.0, "max_decays", || "must be positive".into())?;
        ensure(self.cycles >= 1, "cycles", || "must be at least 1".into())?;
        let (a, b) = self.pre_window_s;
        ensure(a < b && b <= 0.0 && -a <= self.dark_s, "pre_window_s", || {
            format!("must be an increasing window inside the previous dark period, got ({a}, {b})")
        })
    }
}

/// Remaining-probability decay against second-pulse length at each power,
/// exponential fits giving the reset rate, and a linear fit of the reset rate
/// against power.
pub fn run_two_pulse_reset(physics: &Physics, cfg: &ResetConfig, master_seed: u64) -> Result<ProtocolResult> {
    physics.validate().map_err(|e| e.within("physics"))?;
    cfg.validate().map_err(|e| e.within("reset_rate"))?;
    let mut out = ProtocolResult::new("reset-rate", master_seed);
    let threshold = cfg.threshold.unwrap_or(-0.5 * physics.trace.separation());
    let mut remaining = Table::new(
        "remaining",
        &[
            "power_uw",
            "length_s",
            "invalid",
            "not_ionised",
            "remaining",
            "reset",
            "remaining_probability",
            "stderr",
        ],
    );
    let mut rates = Table::new(
        "reset_rates",
        &["power_uw", "nu_r_hz", "nu_r_stderr_hz", "configured_nu_r_hz"],
    );

    let jobs: Vec<(usize, usize, f64, f64)> = cfg
        .second_powers_uw
        .iter()
        .enumerate()
        .flat_map(|(ci, &p)| {
            let nominal = physics.rates.reset_rate(p);
            (0..cfg.lengths).map(move |j| {
                let l = cfg.max_decays / nominal * j as f64 / (cfg.lengths - 1) as f64;
                (ci, j, p, l)
            })
        })
        .collect();
    let counts: Vec<Result<(TwoReadoutCounts, usize)>> = jobs
        .par_iter()
        .map(|&(ci, j, p, l)| {
            let seeds = PointSeeds::new(master_seed, stream::TWO_PULSE_RESET, ci as u64, j as u64);
            reset_point(physics, cfg, p, l, threshold, seeds)
        })
        .collect();

    for (ci, &power) in cfg.second_powers_uw.iter().enumerate() {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut ses = Vec::new();
        for (&(c, _, _, l), res) in jobs.iter().zip(&counts) {
            if c != ci {
                continue;
            }
            let k = match res {
                Ok((k, skipped)) => {
                    if *skipped > 0 {
                        out.warnings
                            .push(format!("power {power} uW, length {l} s: {skipped} cycles skipped"));
                    }
                    *k
                }
                Err(e) => {
                    out.warnings.push(format!("power {power} uW, length {l} s: point dropped: {e}"));
                    continue;
                }
            };
            let Some(prob) = k.remaining_probability() else {
                out.warnings
                    .push(format!("power {power} uW, length {l} s: no ionised cycles in the first readout; skipped"));
                continue;
            };
            let se = binomial_stderr(k.remaining, k.ionised());
            remaining.push(vec![
                power,
                l,
                k.invalid as f64,
                k.not_ionised as f64,
                k.remaining as f64,
                k.reset as f64,
                prob,
                se,
            ]);
            if k.remaining > 0 {
                xs.push(l);
                ys.push(prob.ln());
                ses.push(se / prob);
            }
        }
        match stats::fit_line(&xs, &ys, Some(&ses)) {
            Ok(f) => rates.push(vec![power, -f.slope, f.slope_se, physics.rates.reset_rate(power)]),
            Err(e) => out.warnings.push(format!("power {power} uW: exponential fit failed: {e}")),
        }
    }
    let p = rates.column("power_uw").unwrap_or_default();
    let nu = rates.column("nu_r_hz").unwrap_or_default();
    let se = rates.column("nu_r_stderr_hz").unwrap_or_default();
    match stats::fit_line(&p, &nu, Some(&se)) {
        Ok(f) => {
            out.summaries.push(Summary::new("nu_r_slope", f.slope, f.slope_se, "Hz/uW"));
            out.summaries.push(Summary::new("nu_r_intercept", f.intercept, f.intercept_se, "Hz"));
            out.summaries.push(Summary::new("nu_r_reduced_chi2", f.chi2 / f.dof.max(1) as f64, 0.0, "1"));
        }
        Err(e) => out.warnings.push(format!("reset-rate regression failed: {e}")),
    }
    out.tables.push(rates);
    out.tables.push(remaining);
    Ok(out)
}

fn reset_point(
    physics: &Physics,
    cfg: &ResetConfig,
    power: f64,
    length: f64,
    threshold: f64,
    seeds: PointSeeds,
) -> Result<(TwoReadoutCounts, usize)> {
    let mut segments = vec![
        DriveSegment::new(cfg.first_duration_s, cfg.first_power_uw, cfg.first_resonant_fraction, cfg.first_detuning_hz),
        DriveSegment::dark(cfg.gap_s),
    ];
    if length > 0.0 {
        segments.push(DriveSegment::new(length, power, 0.0, 0.0));
    }
    segments.push(DriveSegment::dark(cfg.dark_s));
    let r1_start = cfg.first_duration_s + cfg.first_readout_delay_s;
    let r1 = (r1_start, r1_start + cfg.first_readout_length_s);
    let r2_start = cfg.first_duration_s + cfg.gap_s + length + cfg.second_readout_delay_s;
    let r2 = (r2_start, r2_start + cfg.second_readout_length_s);
    let traces = run_cycles(physics, segments, cfg.cycles, (cfg.pre_window_s.0, r2.1), seeds)?;
    let (counts, skipped) = classify_two_readouts(&traces, cfg.pre_window_s, r1, r2, threshold);
    Ok((counts, skipped.len()))
}
