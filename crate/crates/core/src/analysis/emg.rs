//! Exponentially modified Gaussian: Gaussian jitter convolved with an
//! exponential decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{nelder_mead, FitFailure, NmOptions};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    pub mu: f64,
    pub sigma: f64,
    pub log_likelihood: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmgFit {
    pub mu: f64,
    pub sigma: f64,
    pub tau: f64,
    pub log_likelihood: f64,
    pub mu_se: f64,
    pub sigma_se: f64,
    pub tau_se: f64,
    /// Maximum-likelihood pure-Gaussian fit of the same data.
    pub gaussian: GaussianFit,
}

impl EmgFit {
    /// Akaike information criterion difference, Gaussian minus EMG; positive
    /// values favour the EMG.
    pub fn aic_advantage(&self) -> f64 {
        (2.0 * 2.0 - 2.0 * self.gaussian.log_likelihood) - (2.0 * 3.0 - 2.0 * self.log_likelihood)
    }

    pub fn prefers_emg(&self) -> bool {
        self.aic_advantage() > 0.0
    }
}

/// `e^{z^2} erfc(z)` without overflow for large `z`.
fn erfcx(z: f64) -> f64 {
    if z < 5.0 {
        (z * z).exp() * libm::erfc(z)
    } else {
        // Laplace continued fraction: erfcx(z) = (1/sqrt(pi)) / (z + (1/2)/(z + 1/(z + (3/2)/(z + ...)))).
        let mut f = z;
        for k in (1..=80).rev() {
            f = z + (k as f64 / 2.0) / f;
        }
        std::f64::consts::FRAC_2_SQRT_PI / 2.0 / f
    }
}

/// Log density of the EMG at `x`.
pub fn emg_log_pdf(x: f64, mu: f64, sigma: f64, tau: f64) -> f64 {
    let u = (x - mu) / sigma;
    let z = (sigma / tau - u) / std::f64::consts::SQRT_2;
    if z < 0.0 {
        -tau.ln() + sigma * sigma / (2.0 * tau * tau) - (x - mu) / tau + (0.5 * libm::erfc(z)).ln()
    } else {
        -tau.ln() - 0.5 * u * u + (0.5 * erfcx(z)).ln()
    }
}

fn emg_log_likelihood(xs: &[f64], mu: f64, sigma: f64, tau: f64) -> f64 {
    xs.iter().map(|&x| emg_log_pdf(x, mu, sigma, tau)).sum()
}

pub fn fit_gaussian(xs: &[f64]) -> Result<GaussianFit> {
    let n = xs.len();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    let mu = stats::mean(xs);
    let var = xs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n as f64;
    if !(var > 0.0) {
        return Err(Error::domain("switch_times", "zero variance"));
    }
    let sigma = var.sqrt();
    let log_likelihood =
        -0.5 * n as f64 * ((2.0 * std::f64::consts::PI * var).ln() + 1.0);
    Ok(GaussianFit {
        mu,
        sigma,
        log_likelihood,
    })
}

pub const EMG_MIN_SAMPLES: usize = 50;

/// Maximum-likelihood EMG fit by Nelder-Mead on `(mu, ln sigma, ln tau)`
/// from a moment-based start. Standard errors come from a finite-difference
/// Hessian of the log-likelihood in `(mu, sigma, tau)`.
pub fn fit_emg(switch_times: &[f64]) -> Result<EmgFit> {
    let n = switch_times.len();
    if n < EMG_MIN_SAMPLES {
        return Err(Error::InsufficientData {
            needed: EMG_MIN_SAMPLES,
            got: n,
        });
    }
    let gaussian = fit_gaussian(switch_times)?;
    // Centre the data for conditioning; the fit is translation-equivariant.
    let shift = gaussian.mu;
    let scale = gaussian.sigma;
    let xs: Vec<f64> = switch_times.iter().map(|x| (x - shift) / scale).collect();

    let m2 = 1.0;
    let m3 = xs.iter().map(|x| x.powi(3)).sum::<f64>() / n as f64;
    let skew = m3.max(0.01).min(1.9);
    let tau0 = (skew / 2.0).cbrt();
    let sigma0 = (m2 - tau0 * tau0).max(0.05).sqrt();
    let mu0 = -tau0;

    let objective = |p: &[f64]| -emg_log_likelihood(&xs, p[0], p[1].exp(), p[2].exp());
    let mut best: Option<(Vec<f64>, f64)> = None;
    for start in [[mu0, sigma0.ln(), tau0.ln()], [-0.05, 0.0, (0.05f64).ln()]] {
        let sol = nelder_mead(
            objective,
            &start,
            &[0.2, 0.2, 0.5],
            NmOptions {
                max_evaluations: 20_000,
                ftol: 1e-12,
                xtol: 1e-9,
            },
        );
        match sol {
            Ok(s) => {
                if best.as_ref().is_none_or(|(_, v)| s.value < *v) {
                    best = Some((s.params, s.value));
                }
            }
            Err(FitFailure::NotConverged { .. }) if best.is_some() => {}
            Err(FitFailure::NotConverged { iterations, best: b }) => {
                return Err(FitFailure::NotConverged {
                    iterations,
                    best: vec![b[0] * scale + shift, b[1].exp() * scale, b[2].exp() * scale],
                }
                .into())
            }
            Err(e) => return Err(e.into()),
        }
    }
    let (p, nll) = best.expect("at least one start converged");
    let (mu, sigma, tau) = (p[0], p[1].exp(), p[2].exp());

    let ses = hessian_se(&xs, [mu, sigma, tau]);
    Ok(EmgFit {
        mu: mu * scale + shift,
        sigma: sigma * scale,
        tau: tau * scale,
        log_likelihood: -nll - n as f64 * scale.ln(),
        mu_se: ses[0] * scale,
        sigma_se: ses[1] * scale,
        tau_se: ses[2] * scale,
        gaussian,
    })
}

fn hessian_se(xs: &[f64], p: [f64; 3]) -> [f64; 3] {
    let f = |q: [f64; 3]| {
        if q[1] <= 0.0 || q[2] <= 0.0 {
            f64::NAN
        } else {
            -emg_log_likelihood(xs, q[0], q[1], q[2])
        }
    };
    let h: [f64; 3] = [1e-4, 1e-4 * p[1], 1e-4 * p[2].max(1e-3)];
    let mut hess = nalgebra::Matrix3::<f64>::zeros();
    let f0 = f(p);
    for i in 0..3 {
        for j in i..3 {
            let value = if i == j {
                let mut a = p;
                let mut b = p;
                a[i] += h[i];
                b[i] -= h[i];
                (f(a) - 2.0 * f0 + f(b)) / (h[i] * h[i])
            } else {
                let at = |si: f64, sj: f64| {
                    let mut q = p;
                    q[i] += si * h[i];
                    q[j] += sj * h[j];
                    f(q)
                };
                (at(1.0, 1.0) - at(1.0, -1.0) - at(-1.0, 1.0) + at(-1.0, -1.0)) / (4.0 * h[i] * h[j])
            };
            hess[(i, j)] = value;
            hess[(j, i)] = value;
        }
    }
    match hess.try_inverse() {
        Some(cov) => [0, 1, 2].map(|i| {
            let v = cov[(i, i)];
            if v > 0.0 {
                v.sqrt()
            } else {
                f64::NAN
            }
        }),
        None => [f64::NAN; 3],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds::rng;
    use rand::Rng;
    use rand_distr::{Exp, Normal};

    fn sample(n: usize, mu: f64, sigma: f64, tau: f64, seed: u64) -> Vec<f64> {
        let mut r = rng(seed);
        let g = Normal::new(mu, sigma).unwrap();
        let e = Exp::new(1.0 / tau).unwrap();
        (0..n)
            .map(|_| r.sample(g) + if tau > 0.0 { r.sample(e) } else { 0.0 })
            .collect()
    }

    #[test]
    fn log_pdf_matches_numerical_convolution() {
        // Direct quadrature of N(x - s; mu, sigma) * Exp(s; tau) over s.
        let (mu, sigma, tau) = (1.0, 0.7, 0.4);
        for x in [-1.0, 0.5, 1.3, 3.0, 6.0] {
            let n = 200_000;
            let upper = 40.0 * tau;
            let h = upper / n as f64;
            let mut acc = 0.0;
            for k in 0..=n {
                let s = k as f64 * h;
                let w = if k == 0 || k == n { 0.5 } else { 1.0 };
                let g = (-(x - s - mu).powi(2) / (2.0 * sigma * sigma)).exp()
                    / (sigma * (2.0 * std::f64::consts::PI).sqrt());
                acc += w * g * (-s / tau).exp() / tau;
            }
            let direct = (acc * h).ln();
            assert!((emg_log_pdf(x, mu, sigma, tau) - direct).abs() < 1e-6, "x = {x}");
        }
    }

    #[test]
    fn far_tail_is_finite() {
        assert!(emg_log_pdf(-50.0, 0.0, 1.0, 0.01).is_finite());
        assert!(emg_log_pdf(50.0, 0.0, 1.0, 0.01).is_finite());
        // z >= 5 branch agrees with the direct branch near the switch.
        let z = 4.999f64;
        let cf = {
            let mut f = z;
            for k in (1..=80).rev() {
                f = z + (k as f64 / 2.0) / f;
            }
            std::f64::consts::FRAC_2_SQRT_PI / 2.0 / f
        };
        assert!((cf / erfcx(z) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn recovers_decay_time() {
        let xs = sample(10_000, 10e-6, 2e-6, 0.72e-6, 20);
        let fit = fit_emg(&xs).unwrap();
        assert!((fit.tau - 0.72e-6).abs() < 0.1e-6, "{fit:?}");
        assert!(fit.prefers_emg());
    }

    #[test]
    fn pure_gaussian_prefers_gaussian() {
        let xs = sample(10_000, 0.0, 5e-6, 0.0, 21);
        let fit = fit_emg(&xs).unwrap();
        // tau is consistent with zero; its estimate scatters on the scale of its error.
        assert!(fit.tau < 3.0 * fit.tau_se, "{fit:?}");
        assert!(!fit.prefers_emg(), "{}", fit.aic_advantage());
    }

    #[test]
    fn translation_equivariant() {
        let xs = sample(2_000, 10e-6, 2e-6, 1e-6, 22);
        let shifted: Vec<f64> = xs.iter().map(|x| x + 1e-3).collect();
        let a = fit_emg(&xs).unwrap();
        let b = fit_emg(&shifted).unwrap();
        assert!((b.mu - a.mu - 1e-3).abs() < 1e-9);
        assert!((b.sigma / a.sigma - 1.0).abs() < 1e-5);
        assert!((b.tau / a.tau - 1.0).abs() < 1e-5);
    }

    #[test]
    fn too_few_samples() {
        assert!(fit_emg(&[1.0; 10]).is_err());
    }
}
