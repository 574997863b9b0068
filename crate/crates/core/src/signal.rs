//! Two-level current traces: synthesis from an event log and serialization.
//!
//! The ideal trap signal is piecewise constant, so the single-pole low-pass
//! output is computed exactly at every sample and at every switch time in
//! between. Noise for global sample `j` is drawn from a counter-addressed
//! ChaCha stream, so a window synthesized on its own is identical to the
//! same samples cut from a full-length trace.

use std::io::{BufRead, Read, Write};

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::ctmc::EventLog;
use crate::error::{ensure, Error, Result};
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TraceParams {
    pub sample_rate_hz: f64,
    /// Current with the trap occupied.
    pub level_high: f64,
    /// Current with the trap ionised.
    pub level_low: f64,
    pub noise_sigma: f64,
    pub bandwidth_hz: f64,
}

impl Default for TraceParams {
    fn default() -> Self {
        Self {
            sample_rate_hz: 100e3,
            level_high: 1.0,
            level_low: 0.0,
            noise_sigma: 0.1,
            bandwidth_hz: 10e3,
        }
    }
}

impl TraceParams {
    pub fn validate(&self) -> Result<()> {
        ensure(self.bandwidth_hz > 0.0, "bandwidth_hz", || {
            format!("must be positive, got {}", self.bandwidth_hz)
        })?;
        ensure(
            self.sample_rate_hz > 2.0 * self.bandwidth_hz,
            "sample_rate_hz",
            || {
                format!(
                    "must exceed twice the bandwidth ({} Hz), got {}",
                    2.0 * self.bandwidth_hz,
                    self.sample_rate_hz
                )
            },
        )?;
        ensure(self.level_high > self.level_low, "level_high", || {
            "must exceed level_low".into()
        })?;
        ensure(self.noise_sigma >= 0.0, "noise_sigma", || {
            format!("must be non-negative, got {}", self.noise_sigma)
        })
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate_hz
    }

    /// Filter time constant `1 / (2 pi f_c)`.
    pub fn tau(&self) -> f64 {
        1.0 / (2.0 * std::f64::consts::PI * self.bandwidth_hz)
    }

    pub fn separation(&self) -> f64 {
        self.level_high - self.level_low
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.level_high + self.level_low)
    }

    fn level(&self, ionised: bool) -> f64 {
        if ionised {
            self.level_low
        } else {
            self.level_high
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurrentTrace {
    pub start_time: f64,
    pub dt: f64,
    pub samples: Vec<f32>,
    pub params: TraceParams,
}

impl CurrentTrace {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn time(&self, index: usize) -> f64 {
        self.start_time + index as f64 * self.dt
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 * self.dt
    }

    /// Index range of samples with time in `[t0, t1)`, clipped to the trace.
    pub fn index_range(&self, t0: f64, t1: f64) -> std::ops::Range<usize> {
        let lo = ((t0 - self.start_time) / self.dt).ceil().max(0.0) as usize;
        let hi = ((t1 - self.start_time) / self.dt).ceil().max(0.0) as usize;
        lo.min(self.len())..hi.min(self.len())
    }
}

/// Trap charge history: sorted switch times, first switch ionises.
#[derive(Debug, Clone, PartialEq)]
pub struct TrapHistory {
    switches: Vec<f64>,
}

impl TrapHistory {
    pub fn from_log(log: &EventLog) -> Self {
        Self {
            switches: log.trap_switch_times(),
        }
    }

    /// Number of switches at or before `t`.
    fn switches_upto(&self, t: f64) -> usize {
        self.switches.partition_point(|&s| s <= t)
    }

    pub fn ionised_at(&self, t: f64) -> bool {
        self.switches_upto(t) % 2 == 1
    }
}

/// Counter-addressed standard normals: draw `j` is a pure function of
/// `(seed, j)`.
struct NoiseStream {
    rng: seeds::SimRng,
}

impl NoiseStream {
    fn at(seed: u64, index: u64) -> Self {
        let mut rng = seeds::rng(seed);
        rng.set_word_pos(index as u128 * 4);
        Self { rng }
    }

    fn next(&mut self) -> f64 {
        let a = self.rng.next_u64();
        let b = self.rng.next_u64();
        let u1 = ((a >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = (b >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// Full trace over `[0, log.duration)` on the global sample grid.
pub fn synthesize(log: &EventLog, params: &TraceParams, seed: u64) -> Result<CurrentTrace> {
    params.validate()?;
    let count = (log.duration * params.sample_rate_hz).floor() as u64;
    ensure(count > 0, "duration", || {
        "event log is shorter than one sample period".into()
    })?;
    Ok(render(&TrapHistory::from_log(log), params, seed, 0, count))
}

/// Samples of the same global grid with time in `[t0, t1)`. The filter is
/// started from the settled level 40 time constants earlier.
pub fn synthesize_window(
    history: &TrapHistory,
    params: &TraceParams,
    seed: u64,
    t0: f64,
    t1: f64,
) -> Result<CurrentTrace> {
    params.validate()?;
    ensure(t0 >= 0.0 && t1 > t0, "window", || format!("invalid window [{t0}, {t1})"))?;
    let first = (t0 * params.sample_rate_hz).ceil() as u64;
    let end = (t1 * params.sample_rate_hz).ceil() as u64;
    ensure(end > first, "window", || "window contains no samples".into())?;
    Ok(render(history, params, seed, first, end - first))
}

fn render(history: &TrapHistory, p: &TraceParams, seed: u64, first: u64, count: u64) -> CurrentTrace {
    let dt = p.dt();
    let tau = p.tau();
    let decay = (-dt / tau).exp();
    let t_first = first as f64 * dt;

    // Initial filter state: settled level at t_first - 40 tau (or at t = 0).
    let mut t = (t_first - 40.0 * tau).max(0.0);
    let mut k = history.switches_upto(t);
    let mut y = p.level(k % 2 == 1);
    let advance = |y: &mut f64, t: &mut f64, k: &mut usize, target: f64| {
        while *k < history.switches.len() && history.switches[*k] <= target {
            let ts = history.switches[*k];
            let level = p.level(*k % 2 == 1);
            *y = level + (*y - level) * (-(ts - *t) / tau).exp();
            *t = ts;
            *k += 1;
        }
        let level = p.level(*k % 2 == 1);
        let gap = target - *t;
        let factor = if (gap - dt).abs() < 1e-12 * dt { decay } else { (-gap / tau).exp() };
        *y = level + (*y - level) * factor;
        *t = target;
    };
    if t_first > t {
        advance(&mut y, &mut t, &mut k, t_first);
    }

    let mut noise = (p.noise_sigma > 0.0).then(|| NoiseStream::at(seed, first));
    let mut samples = Vec::with_capacity(count as usize);
    for j in 0..count {
        if j > 0 {
            let target = (first + j) as f64 * dt;
            advance(&mut y, &mut t, &mut k, target);
        }
        let n = noise.as_mut().map_or(0.0, |s| p.noise_sigma * s.next());
        samples.push((y + n) as f32);
    }
    CurrentTrace {
        start_time: t_first,
        dt,
        samples,
        params: *p,
    }
}

const MAGIC: &[u8; 4] = b"ERTR";
const VERSION: u16 = 1;

/// Little-endian header (magic, version, reserved, sample rate, start time,
/// count) followed by `f32` samples.
pub fn write_binary<W: Write>(trace: &CurrentTrace, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&0u16.to_le_bytes())?;
    w.write_all(&trace.params.sample_rate_hz.to_le_bytes())?;
    w.write_all(&trace.start_time.to_le_bytes())?;
    w.write_all(&(trace.samples.len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(trace.samples.len() * 4);
    for s in &trace.samples {
        buf.extend_from_slice(&s.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Reads a binary trace. Levels, noise and bandwidth come from `params`; the
/// sample rate comes from the header.
pub fn read_binary<R: Read>(mut r: R, params: &TraceParams) -> Result<CurrentTrace> {
    let mut header = [0u8; 32];
    r.read_exact(&mut header)
        .map_err(|_| Error::Format("truncated header".into()))?;
    if &header[0..4] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let f = |i: usize| f64::from_le_bytes(header[i..i + 8].try_into().expect("8 bytes"));
    let sample_rate = f(8);
    let start_time = f(16);
    let count = u64::from_le_bytes(header[24..32].try_into().expect("8 bytes")) as usize;
    if !(sample_rate.is_finite() && sample_rate > 0.0) {
        return Err(Error::Format(format!("bad sample rate {sample_rate}")));
    }
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != count * 4 {
        return Err(Error::Format(format!(
            "expected {} sample bytes, found {}",
            count * 4,
            bytes.len()
        )));
    }
    let samples = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    finish_read(sample_rate, start_time, samples, params)
}

fn finish_read(
    sample_rate: f64,
    start_time: f64,
    samples: Vec<f32>,
    params: &TraceParams,
) -> Result<CurrentTrace> {
    if samples.is_empty() {
        return Err(Error::Format("trace has no samples".into()));
    }
    let params = TraceParams {
        sample_rate_hz: sample_rate,
        ..*params
    };
    params.validate()?;
    Ok(CurrentTrace {
        start_time,
        dt: 1.0 / sample_rate,
        samples,
        params,
    })
}

pub fn write_csv<W: Write>(trace: &CurrentTrace, mut w: W) -> Result<()> {
    writeln!(w, "time_s,current")?;
    for (j, s) in trace.samples.iter().enumerate() {
        writeln!(w, "{},{}", trace.time(j), s)?;
    }
    Ok(())
}

/// Reads a `time_s,current` CSV; the sample rate is taken from the first two
/// time stamps.
pub fn read_csv<R: BufRead>(r: R, params: &TraceParams) -> Result<CurrentTrace> {
    let mut lines = r.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim() != "time_s,current" {
        return Err(Error::Format(format!("unexpected header {header:?}")));
    }
    let mut times = Vec::with_capacity(2);
    let mut samples = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::Format(format!("line {}: cannot parse {line:?}", n + 2));
        let (t, v) = line.split_once(',').ok_or_else(bad)?;
        if times.len() < 2 {
            times.push(t.trim().parse::<f64>().map_err(|_| bad())?);
        }
        samples.push(v.trim().parse::<f32>().map_err(|_| bad())?);
    }
    if times.len() < 2 {
        return Err(Error::Format("need at least two samples to infer the rate".into()));
    }
    let dt = times[1] - times[0];
    if !(dt > 0.0) {
        return Err(Error::Format("time stamps not increasing".into()));
    }
    // Snap to the nearest rate that reproduces dt when written with full precision.
    let rate = (1.0 / dt * 1e6).round() / 1e6;
    finish_read(rate, times[0], samples, params)
}
