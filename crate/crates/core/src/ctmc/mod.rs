//! Three-state model of an Er ion coupled to a charge trap.

mod diffusion;
mod rates;
mod simulate;

pub use diffusion::{step_diffusion, OffsetProcess};
pub use rates::{
    calibrate_excitation_coefficient, excitation_rate, reduce_rates, ReducedRates,
};
pub use simulate::{simulate, simulate_until_ionisations};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// Joint state of the Er ion and the trap. `(Excited, Ionised)` is unreachable
/// and therefore not representable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SystemState {
    GroundNeutral,
    ExcitedNeutral,
    GroundIonised,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Transition {
    Excite,
    DecayNonIonising,
    DecayIonising,
    Reset,
}

impl SystemState {
    /// Applies `transition`, or `None` if it is not allowed from `self`.
    pub fn apply(self, transition: Transition) -> Option<SystemState> {
        use SystemState::*;
        use Transition::*;
        match (self, transition) {
            (GroundNeutral, Excite) => Some(ExcitedNeutral),
            (ExcitedNeutral, DecayNonIonising) => Some(GroundNeutral),
            (ExcitedNeutral, DecayIonising) => Some(GroundIonised),
            (GroundIonised, Reset) => Some(GroundNeutral),
            _ => None,
        }
    }

    pub fn trap_ionised(self) -> bool {
        self == SystemState::GroundIonised
    }
}

/// Physical rates. Frequencies in Hz, powers in µW.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RateParams {
    /// On-resonance excitation rate per µW of resonant power.
    #[serde(rename = "gamma_e_per_power_hz_per_uw")]
    pub gamma_e_per_power: f64,
    #[serde(rename = "homogeneous_fwhm_hz")]
    pub homogeneous_fwhm: f64,
    #[serde(rename = "gamma_i_hz")]
    pub gamma_i: f64,
    #[serde(rename = "gamma_ni_hz")]
    pub gamma_ni: f64,
    #[serde(rename = "reset_spontaneous_hz")]
    pub reset_spontaneous: f64,
    #[serde(rename = "reset_per_power_hz_per_uw")]
    pub reset_per_power: f64,
}

pub const DEFAULT_RESONANT_FRACTION: f64 = 0.496;
pub const DEFAULT_PEAK_SLOPE_HZ_PER_UW: f64 = 1030.0;

impl Default for RateParams {
    fn default() -> Self {
        let gamma_i = 625e3;
        let gamma_ni = 625e3;
        let branching = gamma_i / (gamma_i + gamma_ni);
        Self {
            gamma_e_per_power: DEFAULT_PEAK_SLOPE_HZ_PER_UW
                / (DEFAULT_RESONANT_FRACTION * branching),
            homogeneous_fwhm: 32e6,
            gamma_i,
            gamma_ni,
            reset_spontaneous: 199.0,
            reset_per_power: 2210.0,
        }
    }
}

impl RateParams {
    pub fn total_decay(&self) -> f64 {
        self.gamma_i + self.gamma_ni
    }

    /// Probability that a decay from the excited state ionises the trap.
    pub fn ionising_branching(&self) -> f64 {
        self.gamma_i / self.total_decay()
    }

    pub fn reset_rate(&self, power: f64) -> f64 {
        self.reset_spontaneous + self.reset_per_power * power
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, name: &str| {
            ensure(v.is_finite() && v > 0.0, name, || format!("must be positive, got {v}"))
        };
        positive(self.gamma_e_per_power, "gamma_e_per_power_hz_per_uw")?;
        positive(self.homogeneous_fwhm, "homogeneous_fwhm_hz")?;
        positive(self.gamma_i, "gamma_i_hz")?;
        positive(self.gamma_ni, "gamma_ni_hz")?;
        positive(self.reset_per_power, "reset_per_power_hz_per_uw")?;
        ensure(
            self.reset_spontaneous.is_finite() && self.reset_spontaneous >= 0.0,
            "reset_spontaneous_hz",
            || format!("must be non-negative, got {}", self.reset_spontaneous),
        )
    }

    /// Rescales the excitation coefficient and both reset components so that a
    /// CW drive at (`power`, `alpha`, on resonance) gives the reduced rates
    /// (`nu_i`, `nu_r`).
    pub fn tuned_to(&self, nu_i: f64, nu_r: f64, power: f64, alpha: f64) -> Result<Self> {
        ensure(nu_i > 0.0 && nu_i < self.gamma_i, "nu_i", || {
            format!("must lie in (0, gamma_i = {}), got {nu_i}", self.gamma_i)
        })?;
        ensure(nu_r > 0.0, "nu_r", || format!("must be positive, got {nu_r}"))?;
        ensure(power * alpha > 0.0, "power", || "resonant power must be positive".into())?;
        let gamma_e = nu_i * self.total_decay() / (self.gamma_i - nu_i);
        let scale = nu_r / self.reset_rate(power);
        ensure(scale.is_finite(), "reset", || "reset rate at this power is zero".into())?;
        Ok(Self {
            gamma_e_per_power: gamma_e / (alpha * power),
            reset_spontaneous: self.reset_spontaneous * scale,
            reset_per_power: self.reset_per_power * scale,
            ..*self
        })
    }
}

/// Ornstein-Uhlenbeck wander of the transition centre frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionParams {
    /// Stationary standard deviation per µW of total power.
    #[serde(rename = "sigma_per_power_hz_per_uw")]
    pub sigma_per_power: f64,
    #[serde(rename = "correlation_time_s")]
    pub correlation_time: f64,
    pub enabled: bool,
}

/// Calibrated so that the fitted linewidth passes near 33 MHz at 5.8 µW and
/// 85 MHz at 41 µW (see `spectroscopy::calibrate_sigma_per_power`).
pub const DEFAULT_SIGMA_PER_POWER_HZ_PER_UW: f64 = 0.915e6;

impl Default for DiffusionParams {
    fn default() -> Self {
        Self {
            sigma_per_power: DEFAULT_SIGMA_PER_POWER_HZ_PER_UW,
            correlation_time: 0.2e-6,
            enabled: true,
        }
    }
}

impl DiffusionParams {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    /// Stationary standard deviation at total power `power`.
    pub fn sigma(&self, power: f64) -> f64 {
        if self.enabled {
            self.sigma_per_power * power
        } else {
            0.0
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure(
            self.sigma_per_power.is_finite() && self.sigma_per_power >= 0.0,
            "sigma_per_power_hz_per_uw",
            || format!("must be non-negative, got {}", self.sigma_per_power),
        )?;
        ensure(
            self.correlation_time.is_finite() && self.correlation_time > 0.0,
            "correlation_time_s",
            || format!("must be positive, got {}", self.correlation_time),
        )
    }
}

/// One constant-drive interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriveSegment {
    pub duration_s: f64,
    pub power_uw: f64,
    pub resonant_fraction: f64,
    pub detuning_hz: f64,
}

impl DriveSegment {
    pub fn new(duration_s: f64, power_uw: f64, resonant_fraction: f64, detuning_hz: f64) -> Self {
        Self {
            duration_s,
            power_uw,
            resonant_fraction,
            detuning_hz,
        }
    }

    pub fn dark(duration_s: f64) -> Self {
        Self::new(duration_s, 0.0, 0.0, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        ensure(
            self.duration_s.is_finite() && self.duration_s > 0.0,
            "duration_s",
            || format!("must be positive, got {}", self.duration_s),
        )?;
        ensure(
            self.power_uw.is_finite() && self.power_uw >= 0.0,
            "power_uw",
            || format!("must be non-negative, got {}", self.power_uw),
        )?;
        ensure(
            (0.0..=1.0).contains(&self.resonant_fraction),
            "resonant_fraction",
            || format!("resonant_fraction must be in [0,1], got {}", self.resonant_fraction),
        )?;
        ensure(self.detuning_hz.is_finite(), "detuning_hz", || "must be finite".into())
    }
}

/// Piecewise-constant drive schedule, repeated `repeat_count` times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaserDrive {
    pub segments: Vec<DriveSegment>,
    pub repeat_count: u64,
}

impl LaserDrive {
    pub fn new(segments: Vec<DriveSegment>, repeat_count: u64) -> Self {
        Self {
            segments,
            repeat_count,
        }
    }

    pub fn cw(duration_s: f64, power_uw: f64, resonant_fraction: f64, detuning_hz: f64) -> Self {
        Self::new(
            vec![DriveSegment::new(duration_s, power_uw, resonant_fraction, detuning_hz)],
            1,
        )
    }

    pub fn period(&self) -> f64 {
        self.segments.iter().map(|s| s.duration_s).sum()
    }

    pub fn total_duration(&self) -> f64 {
        self.period() * self.repeat_count as f64
    }

    pub fn validate(&self) -> Result<()> {
        ensure(!self.segments.is_empty(), "segments", || "drive has no segments".into())?;
        ensure(self.repeat_count > 0, "repeat_count", || "must be positive".into())?;
        for (i, seg) in self.segments.iter().enumerate() {
            seg.validate().map_err(|e| e.within(&format!("segments[{i}]")))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub transition: Transition,
}

/// Timestamped transition history of one run, starting in `GroundNeutral`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    pub events: Vec<Event>,
    pub duration: f64,
    pub seed: u64,
}

impl EventLog {
    /// Replays the automaton and returns the final state, or an error at the
    /// first illegal or out-of-order event.
    pub fn replay(&self) -> Result<SystemState> {
        let mut state = SystemState::GroundNeutral;
        let mut last = f64::NEG_INFINITY;
        for (i, ev) in self.events.iter().enumerate() {
            if !(ev.time > last && ev.time >= 0.0 && ev.time <= self.duration) {
                return Err(Error::domain(
                    format!("events[{i}]"),
                    format!("time {} out of order or outside [0, {}]", ev.time, self.duration),
                ));
            }
            last = ev.time;
            state = state.apply(ev.transition).ok_or_else(|| {
                Error::domain(
                    format!("events[{i}]"),
                    format!("{:?} is not allowed from {state:?}", ev.transition),
                )
            })?;
        }
        Ok(state)
    }

    /// Times at which the trap changes charge, alternating ionise / reset.
    pub fn trap_switch_times(&self) -> Vec<f64> {
        self.events
            .iter()
            .filter(|e| matches!(e.transition, Transition::DecayIonising | Transition::Reset))
            .map(|e| e.time)
            .collect()
    }

    pub fn count(&self, transition: Transition) -> usize {
        self.events.iter().filter(|e| e.transition == transition).count()
    }

    /// Exact occupied (`t_i`) and ionised (`t_r`) dwell times. The run starts
    /// in the post-reset state, so the first occupied interval is complete;
    /// the interval still open at `duration` is dropped.
    pub fn dwell_times(&self) -> crate::analysis::DwellRecord {
        let mut record = crate::analysis::DwellRecord::default();
        let mut since = 0.0;
        for (k, t) in self.trap_switch_times().into_iter().enumerate() {
            if k % 2 == 0 {
                record.t_i.push(t - since);
            } else {
                record.t_r.push(t - since);
            }
            since = t;
        }
        record
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn automaton_allows_exactly_four_transitions() {
        use SystemState::*;
        use Transition::*;
        let states = [GroundNeutral, ExcitedNeutral, GroundIonised];
        let transitions = [Excite, DecayNonIonising, DecayIonising, Reset];
        let allowed: usize = states
            .iter()
            .flat_map(|s| transitions.iter().map(move |t| s.apply(*t)))
            .filter(Option::is_some)
            .count();
        assert_eq!(allowed, 4);
    }

    #[test]
    fn default_rates_give_target_peak_slope() {
        let p = RateParams::default();
        let slope = p.gamma_e_per_power * DEFAULT_RESONANT_FRACTION * p.ionising_branching();
        assert!((slope - 1030.0).abs() < 1e-9);
        p.validate().unwrap();
    }

    #[test]
    fn tuned_rates_reproduce_targets() {
        let p = RateParams::default().tuned_to(294.0, 929.0, 1.0, 0.5).unwrap();
        let r = reduce_rates(&p, 1.0, 0.5, 0.0).unwrap();
        assert!((r.nu_i - 294.0).abs() < 1e-9);
        assert!((r.nu_r - 929.0).abs() < 1e-9);
    }

    #[test]
    fn fraction_out_of_range_is_named() {
        let err = DriveSegment::new(1.0, 1.0, 1.3, 0.0).validate().unwrap_err();
        assert!(err.to_string().contains("resonant_fraction must be in [0,1]"));
    }

    #[test]
    fn replay_rejects_illegal_sequence() {
        let log = EventLog {
            events: vec![Event {
                time: 0.1,
                transition: Transition::Reset,
            }],
            duration: 1.0,
            seed: 0,
        };
        assert!(log.replay().is_err());
    }
}
