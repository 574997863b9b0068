use rand::Rng;
use rand_distr::StandardNormal;

use super::DiffusionParams;

/// Exact Ornstein-Uhlenbeck transition over `dt` with stationary standard
/// deviation `sigma_per_power * power`. Draws nothing from `rng` when the
/// process is disabled or the target variance is zero.
pub fn step_diffusion<R: Rng + ?Sized>(
    current_offset: f64,
    dt: f64,
    power: f64,
    params: &DiffusionParams,
    rng: &mut R,
) -> f64 {
    if !params.enabled {
        return 0.0;
    }
    debug_assert!(dt >= 0.0);
    let decay = (-dt / params.correlation_time).exp();
    let sigma = params.sigma(power);
    let mean = current_offset * decay;
    if sigma == 0.0 {
        return mean;
    }
    let spread = sigma * (-(-2.0 * dt / params.correlation_time).exp_m1()).sqrt();
    let z: f64 = rng.sample(StandardNormal);
    mean + spread * z
}

/// Centre offset tracked lazily along a run.
#[derive(Debug, Clone, Copy)]
pub struct OffsetProcess {
    pub value: f64,
    pub time: f64,
}

impl OffsetProcess {
    /// Starts from the stationary law at `power`.
    pub fn stationary<R: Rng + ?Sized>(power: f64, params: &DiffusionParams, rng: &mut R) -> Self {
        let sigma = params.sigma(power);
        let value = if sigma > 0.0 {
            sigma * rng.sample::<f64, _>(StandardNormal)
        } else {
            0.0
        };
        Self { value, time: 0.0 }
    }

    pub fn advance_to<R: Rng + ?Sized>(
        &mut self,
        t: f64,
        power: f64,
        params: &DiffusionParams,
        rng: &mut R,
    ) -> f64 {
        if t > self.time {
            self.value = step_diffusion(self.value, t - self.time, power, params, rng);
            self.time = t;
        }
        self.value
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds::rng;

    #[test]
    fn disabled_is_zero() {
        let p = DiffusionParams::disabled();
        let mut r = rng(1);
        assert_eq!(step_diffusion(5e6, 1e-6, 10.0, &p, &mut r), 0.0);
    }

    #[test]
    fn zero_power_decays_deterministically() {
        let p = DiffusionParams::default();
        let mut r = rng(1);
        let x = step_diffusion(1e6, p.correlation_time, 0.0, &p, &mut r);
        assert!((x - 1e6 / std::f64::consts::E).abs() < 1e-6);
    }

    #[test]
    fn long_step_forgets_start() {
        let p = DiffusionParams {
            sigma_per_power: 1e6,
            correlation_time: 1e-6,
            enabled: true,
        };
        let a = step_diffusion(1e12, 1.0, 10.0, &p, &mut rng(3));
        let b = step_diffusion(-1e12, 1.0, 10.0, &p, &mut rng(3));
        assert_eq!(a, b);
    }

    #[test]
    fn stationary_variance() {
        // sigma = 10 MHz, tau_c = 1 us, 2e6 steps of 0.3 us.
        let p = DiffusionParams {
            sigma_per_power: 1e6,
            correlation_time: 1e-6,
            enabled: true,
        };
        let mut r = rng(11);
        let mut x = 0.0;
        let n = 2_000_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            x = step_diffusion(x, 0.3e-6, 10.0, &p, &mut r);
            s1 += x;
            s2 += x * x;
        }
        let mean = s1 / n as f64;
        let var = s2 / n as f64 - mean * mean;
        let rel = var / 1e14 - 1.0;
        assert!(rel.abs() < 0.05, "relative variance error {rel}");
    }
}
