//! Ionisation probability of a pulse in the reduced two-state model.

use crate::error::{ensure, Error, Result};

/// `R = nu_i / (nu_i + nu_r) * (1 - exp(-(nu_i + nu_r) t_p))`.
pub fn eq1_forward(nu_i: f64, nu_r: f64, t_p: f64) -> Result<f64> {
    ensure(nu_i >= 0.0, "nu_i", || format!("must be non-negative, got {nu_i}"))?;
    ensure(nu_r >= 0.0, "nu_r", || format!("must be non-negative, got {nu_r}"))?;
    ensure(nu_i + nu_r > 0.0, "nu_i", || "nu_i + nu_r must be positive".into())?;
    ensure(t_p >= 0.0, "t_p", || format!("must be non-negative, got {t_p}"))?;
    Ok(forward(nu_i, nu_r, t_p))
}

fn forward(nu_i: f64, nu_r: f64, t_p: f64) -> f64 {
    let s = nu_i + nu_r;
    if s == 0.0 {
        return 0.0;
    }
    -(nu_i / s) * (-s * t_p).exp_m1()
}

/// `dR / d nu_i`.
pub(crate) fn derivative(nu_i: f64, nu_r: f64, t_p: f64) -> f64 {
    let s = nu_i + nu_r;
    if s * t_p < 1e-8 {
        return t_p * (1.0 - 0.5 * s * t_p) - 0.5 * nu_i * t_p * t_p;
    }
    let e = (-s * t_p).exp();
    nu_r / (s * s) * (-(-s * t_p).exp_m1()) + nu_i / s * t_p * e
}

/// Outcome of an inversion; `zero` marks the `R = 0` convention.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Inversion {
    pub nu_i: f64,
    pub zero: bool,
}

/// Unique `nu_i` with `eq1_forward(nu_i, nu_r, t_p) = r`.
///
/// Brackets by doubling, bisects, then polishes with Newton steps to a
/// relative tolerance of 1e-12. `r = 0` returns `nu_i = 0` with the `zero`
/// flag set.
pub fn eq1_invert(r: f64, nu_r: f64, t_p: f64) -> Result<Inversion> {
    ensure(t_p > 0.0, "t_p", || format!("must be positive, got {t_p}"))?;
    ensure(nu_r >= 0.0, "nu_r", || format!("must be non-negative, got {nu_r}"))?;
    if r == 0.0 {
        return Ok(Inversion { nu_i: 0.0, zero: true });
    }
    ensure(r > 0.0 && r < 1.0, "probability", || format!("must be in (0, 1), got {r}"))?;
    let f = |x: f64| forward(x, nu_r, t_p) - r;
    let mut lo = 0.0;
    let mut hi = (r / t_p).max(f64::MIN_POSITIVE);
    while f(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::domain("probability", "failed to bracket the root"));
        }
    }
    // Bisection to a loose relative width, then Newton.
    while hi - lo > 1e-6 * hi {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..50 {
        let step = f(x) / derivative(x, nu_r, t_p);
        let next = (x - step).clamp(lo, hi);
        let done = (next - x).abs() <= 1e-12 * next.abs();
        x = next;
        if done {
            break;
        }
    }
    Ok(Inversion { nu_i: x, zero: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Value from direct double-precision evaluation (checked independently).
    const R_294_929_4US: f64 = 1.1731281888751374e-3;

    #[test]
    fn reference_value() {
        let r = eq1_forward(294.0, 929.0, 4e-6).unwrap();
        assert!((r / R_294_929_4US - 1.0).abs() < 1e-12, "{r:e}");
    }

    #[test]
    fn limits() {
        assert_eq!(eq1_forward(294.0, 929.0, 0.0).unwrap(), 0.0);
        let long = eq1_forward(294.0, 929.0, 1.0).unwrap();
        assert!((long - 294.0 / 1223.0).abs() < 1e-15);
        assert!(eq1_forward(-1.0, 1.0, 1.0).is_err());
        assert!(eq1_forward(0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn inverse_of_reference() {
        let inv = eq1_invert(R_294_929_4US, 929.0, 4e-6).unwrap();
        assert!((inv.nu_i / 294.0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_and_out_of_range() {
        let z = eq1_invert(0.0, 929.0, 4e-6).unwrap();
        assert!(z.zero && z.nu_i == 0.0);
        assert!(eq1_invert(1.0, 929.0, 4e-6).is_err());
        assert!(eq1_invert(-0.1, 929.0, 4e-6).is_err());
    }

    #[test]
    fn small_probability_series() {
        // R ~ nu_i t (1 - (nu_i + nu_r) t / 2) to first order.
        let (r, nu_r, t) = (1e-4, 929.0, 4e-6);
        let inv = eq1_invert(r, nu_r, t).unwrap().nu_i;
        let first = r / t;
        let corrected = first * (1.0 + 0.5 * (first + nu_r) * t);
        assert!((inv / corrected - 1.0).abs() < 1e-5);
        assert!((inv / first - 1.0).abs() < 0.01);
    }

    #[test]
    fn round_trip_six_decades() {
        for k in 0..=60 {
            let x = 10f64.powf(k as f64 / 10.0);
            for &(nu_r, t) in &[(929.0, 4e-6), (199.0, 4e-6), (2.0e5, 4e-6), (0.0, 4e-6)] {
                let r = eq1_forward(x, nu_r, t).unwrap();
                let back = eq1_invert(r, nu_r, t).unwrap().nu_i;
                assert!((back / x - 1.0).abs() <= 1e-9, "x = {x}, nu_r = {nu_r}");
            }
        }
    }

    proptest! {
        #[test]
        fn monotone_in_rate_and_time(
            a in 1e-3f64..1e6, b in 1e-3f64..1e6, nu_r in 0.0f64..1e6, t in 1e-8f64..1e-5
        ) {
            prop_assume!((a / b - 1.0).abs() > 1e-9);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(eq1_forward(lo, nu_r, t).unwrap() < eq1_forward(hi, nu_r, t).unwrap());
            let (t_lo, t_hi) = (t, t * 1.5);
            prop_assert!(eq1_forward(a, nu_r, t_lo).unwrap() < eq1_forward(a, nu_r, t_hi).unwrap());
        }
    }
}
