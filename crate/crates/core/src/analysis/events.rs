use serde::{Deserialize, Serialize};

use super::DwellRecord;
use crate::error::{Error, Result};
use crate::signal::CurrentTrace;
use crate::stats;

/// A detected charge switch. `time` estimates when the trap switched, i.e.
/// with the filter delay removed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub time: f64,
    pub rising: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorSettings {
    pub threshold: f64,
    pub hysteresis: f64,
    /// Dwells shorter than this are treated as unresolved; 0 disables.
    pub resolution: f64,
}

pub const DEFAULT_HYSTERESIS_SIGMAS: f64 = 4.0;

impl DetectorSettings {
    /// Midpoint threshold, hysteresis of four robust noise sigmas (capped
    /// below half the level separation) and the default resolution.
    pub fn auto(trace: &CurrentTrace) -> (Self, Option<String>) {
        let p = &trace.params;
        let sigma = estimate_noise(trace);
        let mut hysteresis = DEFAULT_HYSTERESIS_SIGMAS * sigma;
        let cap = 0.45 * p.separation();
        let mut warning = None;
        if hysteresis > cap {
            warning = Some(format!(
                "noise estimate {sigma:.3e} too large for the level separation; hysteresis capped at {cap:.3e}"
            ));
            hysteresis = cap;
        }
        let threshold = p.midpoint();
        let settings = Self {
            threshold,
            hysteresis,
            resolution: default_resolution(trace, threshold, hysteresis),
        };
        (settings, warning)
    }
}

/// `max(2 tau, 2 t_det)`, where `t_det` is the time a settled filter output
/// needs to cross the far hysteresis band after a switch.
pub fn default_resolution(trace: &CurrentTrace, threshold: f64, hysteresis: f64) -> f64 {
    let p = &trace.params;
    let tau = p.tau();
    let margin = (threshold - hysteresis - p.level_low).min(p.level_high - threshold - hysteresis);
    let t_det = if margin > 0.0 {
        tau * (p.separation() / margin).ln()
    } else {
        f64::INFINITY
    };
    (2.0 * tau).max(2.0 * t_det)
}

/// Robust white-noise estimate `1.4826 MAD(diff) / sqrt 2`.
pub fn estimate_noise(trace: &CurrentTrace) -> f64 {
    if trace.len() < 3 {
        return 0.0;
    }
    let mut d: Vec<f64> = trace
        .samples
        .windows(2)
        .map(|w| w[1] as f64 - w[0] as f64)
        .collect();
    let med = stats::median_in_place(&mut d);
    for v in d.iter_mut() {
        *v = (*v - med).abs();
    }
    1.4826 * stats::median_in_place(&mut d) / std::f64::consts::SQRT_2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    /// Apparent dwells after imposing the resolution.
    pub record: DwellRecord,
    pub edges: Vec<Edge>,
    /// Unresolved dwells merged into their neighbours.
    pub excluded: usize,
    pub settings: DetectorSettings,
    pub warning: Option<String>,
}

/// Schmitt-trigger detection with the default resolution.
pub fn detect_events(trace: &CurrentTrace, threshold: f64, hysteresis: f64) -> Result<Detection> {
    let settings = DetectorSettings {
        threshold,
        hysteresis,
        resolution: default_resolution(trace, threshold, hysteresis),
    };
    detect_with(trace, &settings)
}

pub fn detect_with(trace: &CurrentTrace, settings: &DetectorSettings) -> Result<Detection> {
    let p = &trace.params;
    if !(settings.hysteresis >= 0.0 && 2.0 * settings.hysteresis < p.separation()) {
        return Err(Error::domain(
            "hysteresis",
            format!(
                "must be non-negative and below half the level separation, got {}",
                settings.hysteresis
            ),
        ));
    }
    let empty = |warning: String| Detection {
        record: DwellRecord::default(),
        edges: Vec::new(),
        excluded: 0,
        settings: *settings,
        warning: Some(warning),
    };
    let (lo, hi) = trace
        .samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| {
            (lo.min(s as f64), hi.max(s as f64))
        });
    if trace.is_empty() || settings.threshold <= lo || settings.threshold >= hi {
        return Ok(empty(format!(
            "threshold {} outside trace range [{lo}, {hi}]",
            settings.threshold
        )));
    }

    let edges = schmitt(trace, settings.threshold, settings.hysteresis);
    let (record, excluded) = impose_resolution(&edges, settings.resolution);
    Ok(Detection {
        record,
        edges,
        excluded,
        settings: *settings,
        warning: None,
    })
}

fn schmitt(trace: &CurrentTrace, thr: f64, h: f64) -> Vec<Edge> {
    let p = &trace.params;
    let tau = p.tau();
    let sep = p.separation();
    let fall_delay = delay(tau, sep, thr - p.level_low);
    let rise_delay = delay(tau, sep, p.level_high - thr);
    let mut high = trace.samples[0] as f64 >= thr;
    // Last sample index on the current state's side of the threshold.
    let mut last_side = 0usize;
    let mut edges = Vec::new();
    for (j, &s) in trace.samples.iter().enumerate() {
        let y = s as f64;
        if high {
            if y >= thr {
                last_side = j;
            } else if y < thr - h {
                edges.push(Edge {
                    time: switch_time(trace, last_side, thr, false, fall_delay),
                    rising: false,
                });
                high = false;
                last_side = j;
            }
        } else if y < thr {
            last_side = j;
        } else if y > thr + h {
            edges.push(Edge {
                time: switch_time(trace, last_side, thr, true, rise_delay),
                rising: true,
            });
            high = true;
            last_side = j;
        }
    }
    edges
}

fn delay(tau: f64, sep: f64, distance: f64) -> f64 {
    if distance > 0.0 && distance < sep {
        tau * (sep / distance).ln()
    } else {
        0.0
    }
}

/// Switch time for a threshold crossing between samples `k` and `k + 1`.
/// Assuming a settled start, the first sample past the threshold fixes the
/// switch time through the exponential step response; if that sample is
/// outside the level band, fall back to a linear crossing less the delay.
fn switch_time(trace: &CurrentTrace, k: usize, thr: f64, rising: bool, delay: f64) -> f64 {
    let p = &trace.params;
    let tau = p.tau();
    let sep = p.separation();
    let next = (k + 1).min(trace.len() - 1);
    let y1 = trace.samples[next] as f64;
    let t1 = trace.time(next);
    let remaining = if rising { p.level_high - y1 } else { y1 - p.level_low };
    if remaining > 0.0 && remaining < sep {
        let t = t1 - tau * (sep / remaining).ln();
        if t >= trace.time(k) - delay {
            return t.min(t1);
        }
    }
    let y0 = trace.samples[k] as f64;
    let frac = if y1 != y0 { ((thr - y0) / (y1 - y0)).clamp(0.0, 1.0) } else { 0.5 };
    trace.time(k) + frac * (t1 - trace.time(k)) - delay
}

/// Applies a time resolution to the intervals between `edges`.
///
/// An apparent period starts with a resolvable dwell and absorbs every
/// following dwell until the next resolvable dwell of the opposite level.
/// The period still open at the end is dropped, and with a positive
/// resolution so is the first, whose start may have been hidden. Returns
/// the apparent dwells and the number of absorbed unresolved dwells.
pub fn impose_resolution(edges: &[Edge], resolution: f64) -> (DwellRecord, usize) {
    let mut record = DwellRecord::default();
    let mut excluded = 0;
    // (level is high, start time)
    let mut open: Option<(bool, f64)> = None;
    let mut first = resolution > 0.0;
    for pair in edges.windows(2) {
        let (start, end) = (pair[0], pair[1]);
        let level_high = start.rising;
        let resolvable = end.time - start.time >= resolution;
        match open {
            None => {
                if resolvable {
                    open = Some((level_high, start.time));
                }
            }
            Some((level, since)) => {
                if resolvable && level != level_high {
                    if !first {
                        let d = start.time - since;
                        if level {
                            record.t_i.push(d);
                        } else {
                            record.t_r.push(d);
                        }
                    }
                    first = false;
                    open = Some((level_high, start.time));
                } else if !resolvable {
                    excluded += 1;
                }
            }
        }
    }
    (record, excluded)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctmc::{Event, EventLog, Transition};
    use crate::signal::{synthesize, TraceParams};

    fn raw_trace(samples: Vec<f32>, noise: f64) -> CurrentTrace {
        CurrentTrace {
            start_time: 0.0,
            dt: 1e-5,
            samples,
            params: TraceParams {
                noise_sigma: noise,
                ..TraceParams::default()
            },
        }
    }

    #[test]
    fn constant_trace_gives_nothing() {
        let tr = raw_trace(vec![1.0; 1000], 0.0);
        let d = detect_events(&tr, 0.5, 0.1).unwrap();
        assert!(d.record.is_empty());
        assert!(d.warning.is_some());
    }

    #[test]
    fn square_wave_exact_dwells() {
        // 2 ms period, 50 % duty, 10 us sampling.
        let samples: Vec<f32> = (0..20_000)
            .map(|j| if (j / 100) % 2 == 0 { 1.0 } else { 0.0 })
            .collect();
        let tr = raw_trace(samples, 0.0);
        let d = detect_with(
            &tr,
            &DetectorSettings {
                threshold: 0.5,
                hysteresis: 0.1,
                resolution: 0.0,
            },
        )
        .unwrap();
        assert!(d.record.t_i.len() >= 98 && d.record.t_r.len() >= 98);
        for t in d.record.t_i.iter().chain(&d.record.t_r) {
            assert!((t - 1e-3).abs() < 1e-12, "{t}");
        }
    }

    #[test]
    fn hysteresis_must_leave_a_gap() {
        let tr = raw_trace(vec![1.0, 0.0], 0.0);
        assert!(detect_events(&tr, 0.5, 0.6).is_err());
    }

    #[test]
    fn filtered_switch_times_recovered() {
        let switches = [0.0103456, 0.0152, 0.03001, 0.03517];
        let mut events = Vec::new();
        for (k, &t) in switches.iter().enumerate() {
            if k % 2 == 0 {
                events.push(Event { time: t - 1e-7, transition: Transition::Excite });
                events.push(Event { time: t, transition: Transition::DecayIonising });
            } else {
                events.push(Event { time: t, transition: Transition::Reset });
            }
        }
        let log = EventLog { events, duration: 0.05, seed: 0 };
        let p = TraceParams { noise_sigma: 0.0, ..TraceParams::default() };
        let tr = synthesize(&log, &p, 0).unwrap();
        let d = detect_with(&tr, &DetectorSettings { threshold: 0.5, hysteresis: 0.2, resolution: 0.0 }).unwrap();
        assert_eq!(d.edges.len(), 4);
        for (e, t) in d.edges.iter().zip(switches) {
            assert!((e.time - t).abs() < 1e-9, "{} vs {t}", e.time);
        }
    }

    #[test]
    fn resolution_merges_short_gaps() {
        let e = |time: f64, rising: bool| Edge { time, rising };
        // high from 0, brief low at 1.0, back high at 1.001, low at 2, high at 3, low at 4.
        let edges = [
            e(0.0, true),
            e(1.0, false),
            e(1.001, true),
            e(2.0, false),
            e(3.0, true),
            e(4.0, false),
            e(5.0, true),
        ];
        let (rec, excluded) = impose_resolution(&edges, 0.01);
        assert_eq!(excluded, 1);
        // First period (0..2) dropped; then low 2..3, high 3..4; open low dropped.
        assert_eq!(rec.t_r, vec![1.0]);
        assert_eq!(rec.t_i, vec![1.0]);
    }

    #[test]
    fn mad_noise_estimate() {
        let mut r = crate::seeds::rng(3);
        let samples: Vec<f32> = (0..100_000)
            .map(|_| 1.0 + 0.1 * rand::Rng::sample::<f64, _>(&mut r, rand_distr::StandardNormal) as f32)
            .collect();
        let s = estimate_noise(&raw_trace(samples, 0.1));
        assert!((s - 0.1).abs() < 0.003, "{s}");
    }
}
