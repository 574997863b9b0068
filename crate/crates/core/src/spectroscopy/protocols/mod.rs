//! Measurement protocols. Each one turns a configuration and a master seed
//! into a [`ProtocolResult`](super::ProtocolResult); every measurement point
//! draws its randomness from seeds derived from its indices, so results do
//! not depend on the thread count.

mod cw;
mod fraction;
mod persistence;
mod pulsed;
mod reset;
mod sweep;

pub use cw::{cw_point, rates_from_detection, run_cw_scan, CwMode, CwPoint, CwScanConfig, DetectorConfig};
pub use fraction::{run_resonant_fraction_scan, FractionScanConfig};
pub use persistence::{run_persistence_scan, PersistenceConfig};
pub use pulsed::{run_pulsed_scan, PulseTiming, PulsedScanConfig};
pub use reset::{run_two_pulse_reset, ResetConfig};
pub use sweep::{run_sweep_rates, SweepConfig};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{classify_cycles, CycleCounts};
use crate::ctmc::{simulate, DiffusionParams, DriveSegment, LaserDrive, RateParams};
use crate::error::{ensure, Error, Result};
use crate::seeds::PointSeeds;
use crate::signal::{synthesize_window, CurrentTrace, TraceParams, TrapHistory};

use super::eq1::{derivative, eq1_invert};
use super::lorentz::SpectrumPoint;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Physics {
    pub rates: RateParams,
    pub diffusion: DiffusionParams,
    pub trace: TraceParams,
}

impl Physics {
    pub fn validate(&self) -> Result<()> {
        self.rates.validate().map_err(|e| e.within("rates"))?;
        self.diffusion.validate().map_err(|e| e.within("diffusion"))?;
        self.trace.validate().map_err(|e| e.within("trace"))
    }
}

/// Evenly spaced detunings around `center_hz`. Without an explicit
/// `half_span_hz` the span is `span_factor` times the expected linewidth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetuningGrid {
    pub points: usize,
    pub half_span_hz: Option<f64>,
    pub span_factor: f64,
    pub center_hz: f64,
}

impl Default for DetuningGrid {
    fn default() -> Self {
        Self {
            points: 21,
            half_span_hz: None,
            span_factor: 3.0,
            center_hz: 0.0,
        }
    }
}

impl DetuningGrid {
    pub fn validate(&self) -> Result<()> {
        ensure(self.points >= 5, "points", || {
            format!("a spectrum needs at least 5 points, got {}", self.points)
        })?;
        if let Some(h) = self.half_span_hz {
            ensure(h > 0.0 && h.is_finite(), "half_span_hz", || format!("must be positive, got {h}"))?;
        }
        ensure(self.span_factor > 0.0, "span_factor", || {
            format!("must be positive, got {}", self.span_factor)
        })
    }

    pub fn values(&self, expected_fwhm: f64) -> Vec<f64> {
        let half = self.half_span_hz.unwrap_or(self.span_factor * expected_fwhm);
        let n = self.points;
        (0..n)
            .map(|i| self.center_hz - half + 2.0 * half * i as f64 / (n - 1) as f64)
            .collect()
    }
}

/// Where the reset rate used for pulse-probability inversion comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum ResetSource {
    /// The simulated physics.
    Configured,
    /// A straight line `offset + slope P`, e.g. from a CW regression.
    Line {
        offset_hz: f64,
        slope_hz_per_uw: f64,
    },
}

impl Default for ResetSource {
    fn default() -> Self {
        ResetSource::Line {
            offset_hz: 199.0,
            slope_hz_per_uw: 2210.0,
        }
    }
}

impl ResetSource {
    pub fn rate(&self, rates: &RateParams, power: f64) -> f64 {
        match *self {
            ResetSource::Configured => rates.reset_rate(power),
            ResetSource::Line {
                offset_hz,
                slope_hz_per_uw,
            } => offset_hz + slope_hz_per_uw * power,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let ResetSource::Line {
            offset_hz,
            slope_hz_per_uw,
        } = *self
        {
            ensure(offset_hz >= 0.0, "offset_hz", || format!("must be non-negative, got {offset_hz}"))?;
            ensure(slope_hz_per_uw >= 0.0, "slope_hz_per_uw", || {
                format!("must be non-negative, got {slope_hz_per_uw}")
            })?;
        }
        Ok(())
    }
}

/// Simulates `cycles + 1` repetitions of `segments` and cuts one trace per
/// cycle `1..=cycles` covering `window` (seconds relative to the cycle
/// start). Returned traces have their time axis relative to the cycle
/// start. Cycle 0 only supplies the history preceding cycle 1.
pub(crate) fn run_cycles(
    physics: &Physics,
    segments: Vec<DriveSegment>,
    cycles: u64,
    window: (f64, f64),
    seeds: PointSeeds,
) -> Result<Vec<CurrentTrace>> {
    let drive = LaserDrive::new(segments, cycles + 1);
    drive.validate()?;
    let period = drive.period();
    ensure(window.0 >= -period && window.1 <= period && window.1 > window.0, "window", || {
        format!("cycle window [{}, {}) must lie within one period either side", window.0, window.1)
    })?;
    let log = simulate(&physics.rates, &physics.diffusion, &drive, seeds.simulation)?;
    let history = TrapHistory::from_log(&log);
    // A spare 1.5 samples either side keeps the window inside the trace
    // despite rounding of the absolute times.
    let dt = 1.5 * physics.trace.dt();
    (1..=cycles)
        .map(|c| {
            let anchor = c as f64 * period;
            let mut tr = synthesize_window(
                &history,
                &physics.trace,
                seeds.noise,
                (anchor + window.0 - dt).max(0.0),
                anchor + window.1 + dt,
            )?;
            tr.start_time -= anchor;
            Ok(tr)
        })
        .collect()
}

/// Windows and thresholds for single-readout pulsed cycles, all relative to
/// the cycle start.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct CycleReadout {
    pub cycles: u64,
    pub pre: (f64, f64),
    pub readout: (f64, f64),
    pub threshold: f64,
}

/// Outcome of one pulsed measurement point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct PulsedPoint {
    pub counts: CycleCounts,
    pub skipped: usize,
    pub probability: f64,
    pub nu_i: f64,
    pub stderr: f64,
}

/// Binomial error with the `(k + 1/2) / (N + 1)` estimate, which stays
/// positive for zero counts.
pub(crate) fn binomial_stderr(k: u64, n: u64) -> f64 {
    let p = (k as f64 + 0.5) / (n as f64 + 1.0);
    (p * (1.0 - p) / n as f64).sqrt()
}

pub(crate) fn pulsed_point(
    physics: &Physics,
    segments: Vec<DriveSegment>,
    layout: &CycleReadout,
    t_p: f64,
    nu_r: f64,
    seeds: PointSeeds,
) -> Result<PulsedPoint> {
    let traces = run_cycles(physics, segments, layout.cycles, (layout.pre.0, layout.readout.1), seeds)?;
    let c = classify_cycles(&traces, layout.pre, layout.readout, layout.threshold);
    let valid = c.counts.valid();
    if valid == 0 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let r = c.counts.ionised as f64 / valid as f64;
    let inv = eq1_invert(r, nu_r, t_p)?;
    let se_r = binomial_stderr(c.counts.ionised, valid);
    Ok(PulsedPoint {
        counts: c.counts,
        skipped: c.skipped.len(),
        probability: r,
        nu_i: inv.nu_i,
        stderr: se_r / derivative(inv.nu_i, nu_r, t_p),
    })
}

pub(crate) const POINT_COLUMNS: [&str; 9] = [
    "condition",
    "detuning_hz",
    "ionised",
    "idle",
    "invalid",
    "skipped",
    "probability",
    "nu_i_hz",
    "stderr_hz",
];

/// Pulsed spectrum over `detunings`, points evaluated in parallel.
/// Returns the spectrum points, one table row per point and warnings for
/// failed points or excessive invalid fractions.
#[allow(clippy::too_many_arguments)]
pub(crate) fn pulsed_spectrum(
    physics: &Physics,
    detunings: &[f64],
    segments: impl Fn(f64) -> Vec<DriveSegment> + Sync,
    layout: &CycleReadout,
    t_p: f64,
    nu_r: f64,
    seed_of: impl Fn(usize) -> PointSeeds + Sync,
    condition: f64,
    max_invalid_fraction: f64,
) -> (Vec<SpectrumPoint>, Vec<Vec<f64>>, Vec<String>) {
    let results: Vec<Result<PulsedPoint>> = detunings
        .par_iter()
        .enumerate()
        .map(|(j, &d)| pulsed_point(physics, segments(d), layout, t_p, nu_r, seed_of(j)))
        .collect();
    let mut points = Vec::new();
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    for (&d, res) in detunings.iter().zip(results) {
        match res {
            Ok(p) => {
                if p.counts.invalid_fraction() > max_invalid_fraction {
                    warnings.push(format!(
                        "condition {condition}, detuning {d} Hz: invalid-cycle fraction {:.3} exceeds {max_invalid_fraction}",
                        p.counts.invalid_fraction()
                    ));
                }
                points.push(SpectrumPoint::new(d, p.nu_i, p.stderr));
                rows.push(vec![
                    condition,
                    d,
                    p.counts.ionised as f64,
                    p.counts.idle as f64,
                    p.counts.invalid as f64,
                    p.skipped as f64,
                    p.probability,
                    p.nu_i,
                    p.stderr,
                ]);
            }
            Err(e) => warnings.push(format!("condition {condition}, detuning {d} Hz: point dropped: {e}")),
        }
    }
    (points, rows, warnings)
}

/// Largest pairwise difference divided by the combined standard error.
pub(crate) fn max_pairwise_z(values: &[(f64, f64)]) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, a) in values.iter().enumerate() {
        for b in &values[i + 1..] {
            let z = (a.0 - b.0).abs() / (a.1 * a.1 + b.1 * b.1).sqrt();
            worst = worst.max(z);
        }
    }
    worst
}

pub(crate) fn ensure_list(values: &[f64], field: &str, ok: impl Fn(f64) -> bool, what: &str) -> Result<()> {
    ensure(!values.is_empty(), field, || "must not be empty".into())?;
    for (i, &v) in values.iter().enumerate() {
        ensure(ok(v), &format!("{field}[{i}]"), || format!("{what}, got {v}"))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_is_symmetric() {
        let g = DetuningGrid::default().values(32e6);
        assert_eq!(g.len(), 21);
        assert_eq!(g[0], -96e6);
        assert_eq!(g[10], 0.0);
        assert_eq!(g[20], 96e6);
    }

    #[test]
    fn binomial_error_positive_at_zero() {
        assert!(binomial_stderr(0, 1000) > 0.0);
        let se = binomial_stderr(500, 1000);
        assert!((se - (0.25f64 / 1000.0).sqrt()).abs() < 1e-6);
    }

    #[test]
    fn cycle_traces_are_relative_and_deterministic() {
        let physics = Physics::default();
        let segs = vec![DriveSegment::new(4e-6, 10.0, 0.5, 0.0), DriveSegment::dark(1e-3)];
        let seeds = PointSeeds::new(1, 2, 3, 4);
        let a = run_cycles(&physics, segs.clone(), 10, (-50e-6, 300e-6), seeds).unwrap();
        let b = run_cycles(&physics, segs, 10, (-50e-6, 300e-6), seeds).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 10);
        for tr in &a {
            assert!(tr.start_time <= -50e-6 && tr.start_time > -70e-6);
            assert!(tr.time(tr.len()) >= 300e-6 - 1e-9);
        }
    }

    #[test]
    fn pairwise_z() {
        assert_eq!(max_pairwise_z(&[(1.0, 1.0)]), 0.0);
        let z = max_pairwise_z(&[(0.0, 1.0), (2.0, 1.0), (1.0, 1.0)]);
        assert!((z - 2.0 / 2f64.sqrt()).abs() < 1e-15);
    }
}
