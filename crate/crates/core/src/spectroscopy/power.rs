//! Effective power and the diffusion-broadened linewidth predictor.

use crate::ctmc::{DiffusionParams, RateParams};
use crate::error::{ensure, Error, Result};

use super::lorentz::{fit_lorentzian, SpectrumPoint};

/// `alpha P W_min / W`.
pub fn effective_power(power: f64, alpha: f64, w: f64, w_min: f64) -> Result<f64> {
    ensure(power >= 0.0, "power", || format!("must be non-negative, got {power}"))?;
    ensure((0.0..=1.0).contains(&alpha), "resonant_fraction", || {
        format!("resonant_fraction must be in [0,1], got {alpha}")
    })?;
    ensure(w_min > 0.0, "w_min", || format!("must be positive, got {w_min}"))?;
    ensure(w >= w_min, "w", || {
        format!("linewidth {w} is below the minimum linewidth {w_min}")
    })?;
    Ok(alpha * power * w_min / w)
}

fn simpson(n: usize, a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + k as f64 * h);
    }
    acc * h / 3.0
}

const QUAD_POINTS: usize = 512;

/// Unit-peak Lorentzian of half width `h` averaged over a centred Gaussian
/// offset of standard deviation `sigma` (a Voigt profile normalised to the
/// Lorentzian peak).
pub fn voigt_unit(delta: f64, h: f64, sigma: f64) -> f64 {
    if sigma <= 0.0 {
        return h * h / (delta * delta + h * h);
    }
    let gauss = |x: f64| {
        (-0.5 * (x / sigma).powi(2)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
    };
    if sigma < h {
        simpson(QUAD_POINTS, -9.0 * sigma, 9.0 * sigma, |x| {
            let d = delta - x;
            h * h / (d * d + h * h) * gauss(x)
        })
    } else {
        // x = delta - h tan(theta) turns the Lorentzian into the measure.
        let lim = std::f64::consts::FRAC_PI_2;
        h * simpson(QUAD_POINTS, -lim, lim, |t| gauss(delta - h * t.tan()))
    }
}

/// Reduced ionisation rate expected at `delta` with the centre offset
/// averaged out. With `pulse = Some(t_p)` the offset starts from zero at the
/// pulse start and its variance relaxes as `sigma^2 (1 - e^{-2t/tau_c})`; the
/// excitation rate is time-averaged over the pulse.
pub fn expected_ionisation_rate(
    delta: f64,
    power: f64,
    alpha: f64,
    rates: &RateParams,
    diffusion: &DiffusionParams,
    pulse: Option<f64>,
) -> f64 {
    let h = 0.5 * rates.homogeneous_fwhm;
    let peak = rates.gamma_e_per_power * alpha * power;
    let sigma = diffusion.sigma(power);
    let mean_unit = match pulse {
        Some(t_p) if sigma > 0.0 => {
            let steps = 32;
            (0..steps)
                .map(|k| {
                    let t = (k as f64 + 0.5) / steps as f64 * t_p;
                    let s = sigma * (-(-2.0 * t / diffusion.correlation_time).exp_m1()).sqrt();
                    voigt_unit(delta, h, s)
                })
                .sum::<f64>()
                / steps as f64
        }
        _ => voigt_unit(delta, h, sigma),
    };
    let gamma = peak * mean_unit;
    gamma * rates.gamma_i / (gamma + rates.total_decay())
}

/// FWHM of a Lorentzian fitted to the predicted spectrum the way a measured
/// one is fitted: 21 detunings spanning three widths either side, weighted
/// by shot noise (`stderr ~ sqrt(nu_i)`). The grid is refined until the
/// width it is built from agrees with the fit.
pub fn predicted_linewidth(
    power: f64,
    alpha: f64,
    rates: &RateParams,
    diffusion: &DiffusionParams,
    pulse: Option<f64>,
) -> Result<f64> {
    ensure(power * alpha > 0.0, "power", || "resonant power must be positive".into())?;
    let floor = 1e-6 * expected_ionisation_rate(0.0, power, alpha, rates, diffusion, pulse);
    let mut width = rates.homogeneous_fwhm + 2.355 * diffusion.sigma(power);
    for _ in 0..20 {
        let half_span = 3.0 * width;
        let n = 21;
        let points: Vec<SpectrumPoint> = (0..n)
            .map(|i| {
                let d = -half_span + 2.0 * half_span * i as f64 / (n - 1) as f64;
                let nu = expected_ionisation_rate(d, power, alpha, rates, diffusion, pulse);
                SpectrumPoint::new(d, nu, (nu + floor).sqrt())
            })
            .collect();
        let fitted = fit_lorentzian(&points)?.fwhm;
        let done = (fitted / width - 1.0).abs() < 1e-6;
        width = fitted;
        if done {
            break;
        }
    }
    Ok(width)
}

/// Power-proportional diffusion width that best matches `(power, fwhm)`
/// targets in log space, by golden-section search over `[0, upper]` Hz/µW.
pub fn calibrate_sigma_per_power(
    targets: &[(f64, f64)],
    alpha: f64,
    rates: &RateParams,
    diffusion: &DiffusionParams,
    pulse: Option<f64>,
    upper: f64,
) -> Result<f64> {
    if targets.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let loss = |s: f64| -> f64 {
        let d = DiffusionParams {
            sigma_per_power: s,
            enabled: true,
            ..*diffusion
        };
        targets
            .iter()
            .map(|&(p, w)| match predicted_linewidth(p, alpha, rates, &d, pulse) {
                Ok(pred) => (pred / w).ln().powi(2),
                Err(_) => f64::INFINITY,
            })
            .sum()
    };
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.0, upper);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (loss(c), loss(d));
    while b - a > 1e-5 * upper {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = loss(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = loss(d);
        }
    }
    Ok(0.5 * (a + b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctmc::{DEFAULT_RESONANT_FRACTION, DEFAULT_SIGMA_PER_POWER_HZ_PER_UW};
    use approx::assert_relative_eq;

    #[test]
    fn effective_power_examples() {
        assert_relative_eq!(effective_power(10.0, 0.5, 32e6, 32e6).unwrap(), 5.0);
        let p = effective_power(41.0, 0.496, 85e6, 32e6).unwrap();
        assert_relative_eq!(p, 41.0 * 0.496 * 32.0 / 85.0, max_relative = 1e-15);
        assert!((p - 7.655).abs() < 1e-3);
        assert_relative_eq!(
            effective_power(82.0, 0.496, 85e6, 32e6).unwrap(),
            2.0 * p,
            max_relative = 1e-15
        );
        assert!(effective_power(1.0, 0.5, 30e6, 32e6).is_err());
    }

    #[test]
    fn voigt_limits() {
        let h = 16e6;
        assert_relative_eq!(voigt_unit(5e6, h, 0.0), h * h / (25e12 + h * h));
        // Narrow Gaussian reproduces the Lorentzian.
        assert_relative_eq!(voigt_unit(5e6, h, 1e3), voigt_unit(5e6, h, 0.0), max_relative = 1e-6);
        // Both quadrature branches agree at the switch-over.
        let a = voigt_unit(3e6, h, h * (1.0 - 1e-9));
        let b = voigt_unit(3e6, h, h * (1.0 + 1e-9));
        assert_relative_eq!(a, b, max_relative = 1e-6);
        // Closed form at line centre: h sqrt(pi/2) / sigma * erfcx(h / (sigma sqrt 2)).
        for (ratio, tol) in [(0.1, 1e-6), (0.5, 1e-6), (2.0, 1e-6), (10.0, 1e-5), (1000.0, 1e-3)] {
            let s = ratio * h;
            let z = h / (s * std::f64::consts::SQRT_2);
            let exact = h * (std::f64::consts::PI / 2.0).sqrt() / s * (z * z).exp() * libm::erfc(z);
            assert_relative_eq!(voigt_unit(0.0, h, s), exact, max_relative = tol);
        }
    }

    #[test]
    fn undiffused_linewidth_is_homogeneous() {
        let rates = RateParams::default();
        let w = predicted_linewidth(1.0, 0.5, &rates, &DiffusionParams::disabled(), None).unwrap();
        assert_relative_eq!(w, 32e6, max_relative = 1e-3);
    }

    #[test]
    fn default_sigma_matches_calibration() {
        let rates = RateParams::default();
        let s = calibrate_sigma_per_power(
            &[(5.8, 33e6), (41.0, 85e6)],
            DEFAULT_RESONANT_FRACTION,
            &rates,
            &DiffusionParams::default(),
            Some(4e-6),
            5e6,
        )
        .unwrap();
        assert!(
            (s / DEFAULT_SIGMA_PER_POWER_HZ_PER_UW - 1.0).abs() < 0.01,
            "calibrated {s}"
        );
    }
}
