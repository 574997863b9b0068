use rand::Rng;
use rand_distr::Exp1;

use super::rates::excitation_rate_unchecked;
use super::{
    DiffusionParams, Event, EventLog, LaserDrive, OffsetProcess, RateParams, SystemState,
    Transition,
};
use crate::error::Result;
use crate::seeds::{self, SimRng};

/// Exact trajectory of the three-state chain under `drive`.
///
/// Excitation under a wandering centre frequency is sampled by thinning
/// against the on-resonance rate; decay and reset are homogeneous within a
/// segment. The centre offset starts from its stationary law at the first
/// segment's power.
pub fn simulate(
    params: &RateParams,
    diffusion: &DiffusionParams,
    drive: &LaserDrive,
    seed: u64,
) -> Result<EventLog> {
    run(params, diffusion, drive, seed, u64::MAX)
}

/// Like [`simulate`] but stops right after the `n`-th ionisation (or at the
/// end of the drive). The returned duration is the stop time.
pub fn simulate_until_ionisations(
    params: &RateParams,
    diffusion: &DiffusionParams,
    drive: &LaserDrive,
    seed: u64,
    n: u64,
) -> Result<EventLog> {
    run(params, diffusion, drive, seed, n)
}

struct Walker {
    state: SystemState,
    events: Vec<Event>,
    last: f64,
    ionisations: u64,
}

impl Walker {
    fn push(&mut self, time: f64, transition: Transition) {
        // Guard against ties from floating-point accumulation.
        let time = if time > self.last { time } else { self.last.next_up() };
        self.last = time;
        self.state = self
            .state
            .apply(transition)
            .expect("simulator only proposes legal transitions");
        if transition == Transition::DecayIonising {
            self.ionisations += 1;
        }
        self.events.push(Event { time, transition });
    }
}

fn run(
    params: &RateParams,
    diffusion: &DiffusionParams,
    drive: &LaserDrive,
    seed: u64,
    max_ionisations: u64,
) -> Result<EventLog> {
    params.validate()?;
    diffusion.validate()?;
    drive.validate()?;

    let mut rng: SimRng = seeds::rng(seed);
    let mut offset = OffsetProcess::stationary(drive.segments[0].power_uw, diffusion, &mut rng);
    let mut w = Walker {
        state: SystemState::GroundNeutral,
        events: Vec::new(),
        last: f64::NEG_INFINITY,
        ionisations: 0,
    };
    let total_decay = params.total_decay();
    let branching = params.ionising_branching();
    let period = drive.period();
    let mut seg_start = 0.0;

    'cycles: for cycle in 0..drive.repeat_count {
        // Anchor each cycle to an exact multiple of the period.
        seg_start = cycle as f64 * period;
        for seg in &drive.segments {
            let seg_end = seg_start + seg.duration_s;
            let peak = params.gamma_e_per_power * seg.resonant_fraction * seg.power_uw;
            let reset = params.reset_rate(seg.power_uw);
            let mut t = seg_start;
            loop {
                let rate = match w.state {
                    SystemState::GroundNeutral => peak,
                    SystemState::ExcitedNeutral => total_decay,
                    SystemState::GroundIonised => reset,
                };
                if rate <= 0.0 {
                    break;
                }
                let dt: f64 = rng.sample::<f64, _>(Exp1) / rate;
                let next = t + dt;
                if next >= seg_end {
                    break;
                }
                t = next;
                match w.state {
                    SystemState::GroundNeutral => {
                        let x = offset.advance_to(t, seg.power_uw, diffusion, &mut rng);
                        let gamma =
                            excitation_rate_unchecked(peak, seg.detuning_hz - x, params.homogeneous_fwhm);
                        if rng.random::<f64>() * peak < gamma {
                            w.push(t, Transition::Excite);
                        }
                    }
                    SystemState::ExcitedNeutral => {
                        if rng.random::<f64>() < branching {
                            w.push(t, Transition::DecayIonising);
                            if w.ionisations >= max_ionisations {
                                seg_start = w.last;
                                break 'cycles;
                            }
                        } else {
                            w.push(t, Transition::DecayNonIonising);
                        }
                    }
                    SystemState::GroundIonised => w.push(t, Transition::Reset),
                }
            }
            offset.advance_to(seg_end, seg.power_uw, diffusion, &mut rng);
            seg_start = seg_end;
        }
    }

    Ok(EventLog {
        events: w.events,
        duration: seg_start.max(w.last.max(0.0)),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctmc::{reduce_rates, DriveSegment};
    use proptest::prelude::*;

    #[test]
    fn no_drive_means_no_events() {
        let mut p = RateParams::default();
        p.reset_spontaneous = 0.0;
        let drive = LaserDrive::cw(1.0, 0.0, 0.5, 0.0);
        let log = simulate(&p, &DiffusionParams::default(), &drive, 9).unwrap();
        assert!(log.events.is_empty());
        assert_eq!(log.duration, 1.0);
    }

    #[test]
    fn empty_drive_rejected() {
        let drive = LaserDrive::new(vec![], 1);
        assert!(simulate(&RateParams::default(), &DiffusionParams::default(), &drive, 0).is_err());
    }

    #[test]
    fn deterministic_in_seed() {
        let p = RateParams::default();
        let drive = LaserDrive::new(
            vec![DriveSegment::new(4e-6, 41.0, 0.496, 0.0), DriveSegment::dark(5e-3)],
            200,
        );
        let d = DiffusionParams::default();
        let a = simulate(&p, &d, &drive, 5).unwrap();
        let b = simulate(&p, &d, &drive, 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, simulate(&p, &d, &drive, 6).unwrap());
    }

    #[test]
    fn cw_dwell_means_match_reduction() {
        let p = RateParams::default().tuned_to(294.0, 929.0, 1.0, 0.5).unwrap();
        let drive = LaserDrive::cw(1e6, 1.0, 0.5, 0.0);
        let log = simulate_until_ionisations(&p, &DiffusionParams::disabled(), &drive, 77, 20_000)
            .unwrap();
        let rates = reduce_rates(&p, 1.0, 0.5, 0.0).unwrap();
        let dw = log.dwell_times();
        for (samples, rate) in [(&dw.t_i, rates.nu_i), (&dw.t_r, rates.nu_r)] {
            let n = samples.len() as f64;
            let mean: f64 = samples.iter().sum::<f64>() / n;
            let z = (mean - 1.0 / rate) / (1.0 / rate / n.sqrt());
            assert!(z.abs() < 3.0, "z = {z} for rate {rate}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn logs_replay_cleanly(
            seed in any::<u64>(),
            power in 0.0f64..80.0,
            alpha in 0.0f64..=1.0,
            detuning in -1e8f64..1e8,
            tau in 1e-8f64..1e-3,
            on in 1e-6f64..1e-4,
            off in 1e-6f64..1e-3,
        ) {
            let p = RateParams::default();
            let d = DiffusionParams { correlation_time: tau, ..DiffusionParams::default() };
            let drive = LaserDrive::new(
                vec![DriveSegment::new(on, power, alpha, detuning), DriveSegment::dark(off)],
                50,
            );
            let log = simulate(&p, &d, &drive, seed).unwrap();
            prop_assert!(log.replay().is_ok());
            prop_assert!((log.duration - drive.total_duration()).abs() <= 1e-9 * log.duration);
        }
    }
}
