use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub rate: f64,
    pub stderr: f64,
    pub n: usize,
}

/// Maximum-likelihood exponential rate `n / sum(t)`.
pub fn fit_exponential(dwells: &[f64]) -> Result<RateEstimate> {
    let n = dwells.len();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    ensure(dwells.iter().all(|t| t.is_finite() && *t > 0.0), "dwells", || {
        "all dwell times must be positive".into()
    })?;
    let total: f64 = dwells.iter().sum();
    let rate = n as f64 / total;
    Ok(RateEstimate {
        rate,
        stderr: rate / (n as f64).sqrt(),
        n,
    })
}

/// Left-closed bins `[k w, (k+1) w)` from zero up to the bin holding the
/// largest dwell; empty bins in between are kept.
pub fn histogram(dwells: &[f64], bin_width: f64) -> Result<Vec<(f64, u64)>> {
    ensure(bin_width > 0.0 && bin_width.is_finite(), "bin_width", || {
        format!("must be positive, got {bin_width}")
    })?;
    ensure(dwells.iter().all(|t| t.is_finite() && *t >= 0.0), "dwells", || {
        "dwell times must be non-negative".into()
    })?;
    let Some(max) = dwells.iter().copied().reduce(f64::max) else {
        return Ok(Vec::new());
    };
    let bins = (max / bin_width).floor() as usize + 1;
    let mut counts = vec![0u64; bins];
    for t in dwells {
        counts[((t / bin_width).floor() as usize).min(bins - 1)] += 1;
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(k, c)| ((k as f64 + 0.5) * bin_width, c))
        .collect())
}

/// Rates corrected for events shorter than the imposed resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrectedRates {
    pub nu_i: RateEstimate,
    pub nu_r: RateEstimate,
    pub iterations: usize,
}

/// Two-state missed-event correction.
///
/// With a resolution `xi`, the mean apparent duration of a high period is
/// `e^{b xi}/a + (e^{b xi} - 1)/b` for leave-high rate `a` and leave-low rate
/// `b`, and symmetrically for low periods. The pair is solved by fixed-point
/// iteration from the uncorrected estimates.
pub fn correct_missed_events(
    apparent_high: &[f64],
    apparent_low: &[f64],
    resolution: f64,
) -> Result<CorrectedRates> {
    let hi = fit_exponential(apparent_high)?;
    let lo = fit_exponential(apparent_low)?;
    ensure(resolution >= 0.0, "resolution", || "must be non-negative".into())?;
    let m_h = 1.0 / hi.rate;
    let m_l = 1.0 / lo.rate;
    let excess = |rate: f64| {
        // (e^{r xi} - 1) / r, finite as r -> 0.
        if rate * resolution < 1e-8 {
            resolution
        } else {
            (rate * resolution).exp_m1() / rate
        }
    };
    let (mut a, mut b) = (hi.rate, lo.rate);
    let mut iterations = 0;
    loop {
        iterations += 1;
        let na = (b * resolution).exp() / (m_h - excess(b));
        let nb = (a * resolution).exp() / (m_l - excess(a));
        if !(na.is_finite() && nb.is_finite() && na > 0.0 && nb > 0.0) {
            return Err(Error::domain(
                "resolution",
                "missed-event correction diverged; resolution too coarse for these rates",
            ));
        }
        let done = (na - a).abs() <= 1e-13 * na && (nb - b).abs() <= 1e-13 * nb;
        a = na;
        b = nb;
        if done {
            break;
        }
        if iterations >= 10_000 {
            return Err(Error::domain("resolution", "missed-event correction did not converge"));
        }
    }
    let scaled = |est: RateEstimate, rate: f64| RateEstimate {
        rate,
        stderr: rate / (est.n as f64).sqrt(),
        n: est.n,
    };
    Ok(CorrectedRates {
        nu_i: scaled(hi, a),
        nu_r: scaled(lo, b),
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds::rng;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::Exp;

    #[test]
    fn constant_sample() {
        let e = fit_exponential(&[1.0; 4]).unwrap();
        assert_eq!(e.rate, 1.0);
        assert_eq!(e.stderr, 0.5);
        assert_eq!(fit_exponential(&[0.5, 1.5]).unwrap().rate, 1.0);
        assert!(matches!(
            fit_exponential(&[1.0]),
            Err(Error::InsufficientData { needed: 2, got: 1 })
        ));
    }

    #[test]
    fn sampled_rate_within_three_se() {
        let mut r = rng(929);
        let d = Exp::new(929.0).unwrap();
        let x: Vec<f64> = (0..10_000).map(|_| r.sample(d)).collect();
        let e = fit_exponential(&x).unwrap();
        assert!((e.rate - 929.0).abs() < 3.0 * 9.29);
    }

    #[test]
    fn histogram_examples() {
        assert!(histogram(&[], 0.2).unwrap().is_empty());
        let h = histogram(&[0.1, 0.1, 0.3], 0.2).unwrap();
        assert_eq!(h.len(), 2);
        assert_relative_eq!(h[0].0, 0.1);
        assert_eq!(h[0].1, 2);
        assert_relative_eq!(h[1].0, 0.3);
        assert_eq!(h[1].1, 1);
    }

    #[test]
    fn histogram_log_counts_slope() {
        let mut r = rng(5);
        let d = Exp::new(50.0).unwrap();
        let x: Vec<f64> = (0..100_000).map(|_| r.sample(d)).collect();
        let h = histogram(&x, 0.005).unwrap();
        let (xs, ys): (Vec<f64>, Vec<f64>) = h
            .iter()
            .filter(|(_, c)| *c >= 50)
            .map(|(b, c)| (*b, (*c as f64).ln()))
            .unzip();
        let se: Vec<f64> = h
            .iter()
            .filter(|(_, c)| *c >= 50)
            .map(|(_, c)| 1.0 / (*c as f64).sqrt())
            .collect();
        let fit = crate::stats::fit_line(&xs, &ys, Some(&se)).unwrap();
        assert!((fit.slope + 50.0).abs() < 3.0 * fit.slope_se, "{fit:?}");
    }

    #[test]
    fn correction_is_identity_at_zero_resolution() {
        let c = correct_missed_events(&[1.0, 3.0], &[0.5, 0.5], 0.0).unwrap();
        assert_relative_eq!(c.nu_i.rate, 0.5, max_relative = 1e-12);
        assert_relative_eq!(c.nu_r.rate, 2.0, max_relative = 1e-12);
    }

    #[test]
    fn correction_inverts_exact_means() {
        let (a, b, xi): (f64, f64, f64) = (300.0, 900.0, 60e-6);
        let m_h = (b * xi).exp() / a + (b * xi).exp_m1() / b;
        let m_l = (a * xi).exp() / b + (a * xi).exp_m1() / a;
        let c = correct_missed_events(&[m_h, m_h], &[m_l, m_l], xi).unwrap();
        assert_relative_eq!(c.nu_i.rate, a, max_relative = 1e-10);
        assert_relative_eq!(c.nu_r.rate, b, max_relative = 1e-10);
    }

    proptest! {
        #[test]
        fn rate_scales_inversely(xs in proptest::collection::vec(1e-6f64..10.0, 2..50), c in 1e-3f64..1e3) {
            let a = fit_exponential(&xs).unwrap();
            let scaled: Vec<f64> = xs.iter().map(|x| x * c).collect();
            let b = fit_exponential(&scaled).unwrap();
            prop_assert!((b.rate * c / a.rate - 1.0).abs() < 1e-12);
        }

        #[test]
        fn histogram_conserves_count(xs in proptest::collection::vec(0.0f64..5.0, 0..200), w in 1e-3f64..2.0) {
            let h = histogram(&xs, w).unwrap();
            prop_assert_eq!(h.iter().map(|(_, c)| *c).sum::<u64>() as usize, xs.len());
        }
    }
}
