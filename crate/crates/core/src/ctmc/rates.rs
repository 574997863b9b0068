use super::RateParams;
use crate::error::{ensure, Result};

/// Reduced two-state rates: ionisation of an occupied trap and reset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReducedRates {
    pub nu_i: f64,
    pub nu_r: f64,
}

/// Lorentzian excitation rate in Hz.
pub fn excitation_rate(
    delta: f64,
    power: f64,
    alpha: f64,
    center_offset: f64,
    params: &RateParams,
) -> Result<f64> {
    ensure(power >= 0.0, "power", || format!("must be non-negative, got {power}"))?;
    ensure((0.0..=1.0).contains(&alpha), "resonant_fraction", || {
        format!("resonant_fraction must be in [0,1], got {alpha}")
    })?;
    Ok(excitation_rate_unchecked(
        params.gamma_e_per_power * alpha * power,
        delta - center_offset,
        params.homogeneous_fwhm,
    ))
}

#[inline]
pub(crate) fn excitation_rate_unchecked(peak: f64, detuning: f64, fwhm: f64) -> f64 {
    let hw2 = 0.25 * fwhm * fwhm;
    peak * hw2 / (detuning * detuning + hw2)
}

/// Analytic reduction of the three-state chain with zero centre offset.
/// `nu_i` is the inverse mean first-passage time from `GroundNeutral` to
/// `GroundIonised`.
pub fn reduce_rates(params: &RateParams, power: f64, alpha: f64, delta: f64) -> Result<ReducedRates> {
    let gamma_e = excitation_rate(delta, power, alpha, 0.0, params)?;
    Ok(ReducedRates {
        nu_i: reduced_ionisation(gamma_e, params),
        nu_r: params.reset_rate(power),
    })
}

pub(crate) fn reduced_ionisation(gamma_e: f64, params: &RateParams) -> f64 {
    gamma_e * params.gamma_i / (gamma_e + params.total_decay())
}

/// Excitation coefficient such that the low-power on-resonance ionisation rate
/// grows by `slope` Hz per µW of total power at resonant fraction `alpha`.
pub fn calibrate_excitation_coefficient(slope: f64, alpha: f64, params: &RateParams) -> Result<f64> {
    ensure(slope > 0.0, "slope", || format!("must be positive, got {slope}"))?;
    ensure(alpha > 0.0 && alpha <= 1.0, "resonant_fraction", || {
        format!("resonant_fraction must be in (0,1], got {alpha}")
    })?;
    Ok(slope / (alpha * params.ionising_branching()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn params() -> RateParams {
        RateParams::default()
    }

    #[test]
    fn on_resonance_and_half_width() {
        let p = params();
        let peak = excitation_rate(0.0, 2.0, 0.5, 0.0, &p).unwrap();
        assert_relative_eq!(peak, p.gamma_e_per_power, max_relative = 1e-15);
        let half = excitation_rate(p.homogeneous_fwhm / 2.0, 2.0, 0.5, 0.0, &p).unwrap();
        assert_relative_eq!(half, peak / 2.0, max_relative = 1e-14);
        let shifted = excitation_rate(5e6, 2.0, 0.5, 5e6, &p).unwrap();
        assert_relative_eq!(shifted, peak);
    }

    #[test]
    fn coefficient_example_matches_peak_slope() {
        let p = RateParams {
            gamma_e_per_power: 2080.0,
            ..params()
        };
        let g = excitation_rate(0.0, 1.0, 0.496, 0.0, &p).unwrap();
        assert_relative_eq!(g, 1031.68, max_relative = 1e-12);
    }

    #[test]
    fn domain_errors() {
        assert!(excitation_rate(0.0, -1.0, 0.5, 0.0, &params()).is_err());
        assert!(excitation_rate(0.0, 1.0, 1.5, 0.0, &params()).is_err());
        assert_eq!(excitation_rate(0.0, 0.0, 0.5, 0.0, &params()).unwrap(), 0.0);
    }

    #[test]
    fn reduction_limits() {
        let p = params();
        let low = reduce_rates(&p, 1e-3, 1.0, 0.0).unwrap();
        let gamma_e = p.gamma_e_per_power * 1e-3;
        assert_relative_eq!(low.nu_i, gamma_e * p.ionising_branching(), max_relative = 1e-5);
        let high = reduced_ionisation(1e15, &p);
        assert_relative_eq!(high, p.gamma_i, max_relative = 1e-8);
        let dark = reduce_rates(&p, 0.0, 0.0, 0.0).unwrap();
        assert_eq!(dark.nu_r, 199.0);
        assert_eq!(dark.nu_i, 0.0);
    }

    #[test]
    fn calibration_inverts_slope() {
        let p = params();
        let k = calibrate_excitation_coefficient(1030.0, 0.496, &p).unwrap();
        assert_relative_eq!(k, p.gamma_e_per_power, max_relative = 1e-15);
    }

    proptest! {
        #[test]
        fn lorentzian_peaks_at_offset(delta in -1e9f64..1e9, offset in -1e8f64..1e8) {
            let p = params();
            let at = excitation_rate(delta, 3.0, 0.7, offset, &p).unwrap();
            let peak = excitation_rate(offset, 3.0, 0.7, offset, &p).unwrap();
            prop_assert!(at <= peak * (1.0 + 1e-15));
            prop_assert!(at >= 0.0);
        }
    }
}
