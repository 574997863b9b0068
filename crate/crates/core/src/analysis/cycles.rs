use serde::{Deserialize, Serialize};

use crate::signal::CurrentTrace;
use crate::stats;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleCounts {
    pub ionised: u64,
    pub idle: u64,
    pub invalid: u64,
}

impl CycleCounts {
    pub fn valid(&self) -> u64 {
        self.ionised + self.idle
    }

    pub fn total(&self) -> u64 {
        self.valid() + self.invalid
    }

    /// Ionised fraction of valid cycles, or `None` without valid cycles.
    pub fn probability(&self) -> Option<f64> {
        (self.valid() > 0).then(|| self.ionised as f64 / self.valid() as f64)
    }

    pub fn invalid_fraction(&self) -> f64 {
        if self.total() == 0 {
            0.0
        } else {
            self.invalid as f64 / self.total() as f64
        }
    }

    pub fn merge(&mut self, other: CycleCounts) {
        self.ionised += other.ionised;
        self.idle += other.idle;
        self.invalid += other.invalid;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub counts: CycleCounts,
    /// Input index and reason for every trace that could not be classified.
    pub skipped: Vec<(usize, String)>,
}

fn window<'a>(trace: &'a CurrentTrace, w: (f64, f64), name: &str) -> Result<&'a [f32], String> {
    let r = trace.index_range(w.0, w.1);
    let inside = w.0 >= trace.start_time - 1e-12 && w.1 <= trace.time(trace.len()) + 1e-12;
    if r.is_empty() || !inside {
        Err(format!("{name} window [{}, {}) outside trace", w.0, w.1))
    } else {
        Ok(&trace.samples[r])
    }
}

fn mean(s: &[f32]) -> f64 {
    s.iter().map(|&v| v as f64).sum::<f64>() / s.len() as f64
}

fn min(s: &[f32]) -> f64 {
    s.iter().map(|&v| v as f64).fold(f64::INFINITY, f64::min)
}

/// Per-trace pre-pulse baselines; `None` marks a trace whose window is bad.
fn baselines(traces: &[CurrentTrace], pre: (f64, f64), skipped: &mut Vec<(usize, String)>) -> (Vec<Option<f64>>, f64) {
    let base: Vec<Option<f64>> = traces
        .iter()
        .enumerate()
        .map(|(i, tr)| match window(tr, pre, "pre") {
            Ok(s) => Some(mean(s)),
            Err(e) => {
                skipped.push((i, e));
                None
            }
        })
        .collect();
    let valid: Vec<f64> = base.iter().flatten().copied().collect();
    let reference = if valid.is_empty() { 0.0 } else { stats::median(&valid) };
    (base, reference)
}

/// Classifies pulsed cycles. `threshold` is a signed current change (negative
/// for a drop) measured from each cycle's pre-pulse baseline. A cycle is
/// invalid when its baseline sits below the batch median by more than the
/// threshold drop, i.e. the trap was still ionised; otherwise it is ionised
/// when the readout minimum drops below the threshold.
pub fn classify_cycles(
    traces: &[CurrentTrace],
    pre_window: (f64, f64),
    readout_window: (f64, f64),
    threshold: f64,
) -> Classification {
    let mut out = Classification::default();
    let (base, reference) = baselines(traces, pre_window, &mut out.skipped);
    for (i, (tr, b)) in traces.iter().zip(base).enumerate() {
        let Some(b) = b else { continue };
        let readout = match window(tr, readout_window, "readout") {
            Ok(s) => s,
            Err(e) => {
                out.skipped.push((i, e));
                continue;
            }
        };
        if b - reference < threshold {
            out.counts.invalid += 1;
        } else if min(readout) - b < threshold {
            out.counts.ionised += 1;
        } else {
            out.counts.idle += 1;
        }
    }
    out.skipped.sort_by_key(|(i, _)| *i);
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TwoReadoutCounts {
    pub invalid: u64,
    /// No ionisation seen in the first readout.
    pub not_ionised: u64,
    /// Ionised in the first readout and still ionised in the second.
    pub remaining: u64,
    /// Ionised in the first readout and reset by the second.
    pub reset: u64,
}

impl TwoReadoutCounts {
    pub fn ionised(&self) -> u64 {
        self.remaining + self.reset
    }

    pub fn remaining_probability(&self) -> Option<f64> {
        (self.ionised() > 0).then(|| self.remaining as f64 / self.ionised() as f64)
    }

    pub fn merge(&mut self, o: TwoReadoutCounts) {
        self.invalid += o.invalid;
        self.not_ionised += o.not_ionised;
        self.remaining += o.remaining;
        self.reset += o.reset;
    }
}

/// Two-pulse classification: the first readout (minimum) flags ionisation,
/// the second readout (mean) tells whether the trap is still ionised.
pub fn classify_two_readouts(
    traces: &[CurrentTrace],
    pre_window: (f64, f64),
    first_readout: (f64, f64),
    second_readout: (f64, f64),
    threshold: f64,
) -> (TwoReadoutCounts, Vec<(usize, String)>) {
    let mut skipped = Vec::new();
    let mut counts = TwoReadoutCounts::default();
    let (base, reference) = baselines(traces, pre_window, &mut skipped);
    for (i, (tr, b)) in traces.iter().zip(base).enumerate() {
        let Some(b) = b else { continue };
        let windows = window(tr, first_readout, "first readout")
            .and_then(|r1| window(tr, second_readout, "second readout").map(|r2| (r1, r2)));
        let (r1, r2) = match windows {
            Ok(w) => w,
            Err(e) => {
                skipped.push((i, e));
                continue;
            }
        };
        if b - reference < threshold {
            counts.invalid += 1;
        } else if min(r1) - b >= threshold {
            counts.not_ionised += 1;
        } else if mean(r2) - b < threshold {
            counts.remaining += 1;
        } else {
            counts.reset += 1;
        }
    }
    skipped.sort_by_key(|(i, _)| *i);
    (counts, skipped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::TraceParams;
    use proptest::prelude::*;

    fn trace(samples: Vec<f32>) -> CurrentTrace {
        CurrentTrace {
            start_time: -50e-6,
            dt: 1e-5,
            samples,
            params: TraceParams::default(),
        }
    }

    const PRE: (f64, f64) = (-50e-6, -5e-6);
    const READ: (f64, f64) = (14e-6, 304e-6);

    fn flat(level: f32) -> Vec<f32> {
        vec![level; 40]
    }

    fn dropping(level: f32) -> Vec<f32> {
        let mut s = flat(level);
        for v in s.iter_mut().skip(10) {
            *v = level - 1.0;
        }
        s
    }

    #[test]
    fn flat_traces_are_idle() {
        let c = classify_cycles(&vec![trace(flat(1.0)); 5], PRE, READ, -0.5);
        assert_eq!(c.counts, CycleCounts { ionised: 0, idle: 5, invalid: 0 });
    }

    #[test]
    fn drop_in_readout_is_ionised_and_low_baseline_invalid() {
        let traces = vec![
            trace(flat(1.0)),
            trace(dropping(1.0)),
            trace(flat(0.0)),
            trace(flat(1.0)),
        ];
        let c = classify_cycles(&traces, PRE, READ, -0.5);
        assert_eq!(c.counts, CycleCounts { ionised: 1, idle: 2, invalid: 1 });
    }

    #[test]
    fn window_outside_trace_is_reported() {
        let c = classify_cycles(&[trace(flat(1.0))], (-1.0, -0.5), READ, -0.5);
        assert_eq!(c.counts.total(), 0);
        assert_eq!(c.skipped.len(), 1);
    }

    #[test]
    fn two_readouts() {
        let mut reset = dropping(1.0);
        for v in reset.iter_mut().skip(30) {
            *v = 1.0;
        }
        let traces = vec![trace(flat(1.0)), trace(dropping(1.0)), trace(reset)];
        let (c, skipped) =
            classify_two_readouts(&traces, PRE, (14e-6, 100e-6), (330e-6, 350e-6), -0.5);
        assert!(skipped.is_empty());
        assert_eq!(c.not_ionised, 1);
        assert_eq!(c.remaining, 1);
        assert_eq!(c.reset, 1);
    }

    proptest! {
        #[test]
        fn invariant_to_common_offset(
            kinds in proptest::collection::vec(0u8..3, 1..20),
            offset in -100.0f32..100.0,
        ) {
            let build = |shift: f32| -> Vec<CurrentTrace> {
                kinds.iter().map(|k| match k {
                    0 => trace(flat(1.0 + shift)),
                    1 => trace(dropping(1.0 + shift)),
                    _ => trace(flat(shift - 1.0)),
                }).collect()
            };
            let a = classify_cycles(&build(0.0), PRE, READ, -0.5);
            let b = classify_cycles(&build(offset), PRE, READ, -0.5);
            prop_assert_eq!(a.counts, b.counts);
        }
    }
}
