use nalgebra::{DMatrix, DVector};

use super::FitFailure;

/// Weighted least-squares problem `sum_i ((y_i - f(x_i; p)) / s_i)^2`.
pub trait LmProblem {
    fn n_params(&self) -> usize;
    fn n_points(&self) -> usize;
    /// Weighted residuals `(y_i - f_i) / s_i`.
    fn residuals(&self, p: &[f64], out: &mut [f64]);
    /// Jacobian of the weighted model `f_i / s_i`, row-major `n_points x n_params`.
    fn jacobian(&self, p: &[f64], out: &mut DMatrix<f64>);
    /// Projects `p` back into the feasible box; default is a no-op.
    fn clamp(&self, _p: &mut [f64]) {}
}

#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Relative chi-square decrease below which the fit counts as converged.
    pub ftol: f64,
    /// Relative step size below which the fit counts as converged.
    pub xtol: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            ftol: 1e-15,
            xtol: 1e-13,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmSolution {
    pub params: Vec<f64>,
    pub chi2: f64,
    /// `(J^T J)^-1` at the solution, unscaled.
    pub covariance: DMatrix<f64>,
    pub iterations: usize,
}

fn chi2_of<P: LmProblem>(problem: &P, p: &[f64], r: &mut [f64]) -> f64 {
    problem.residuals(p, r);
    r.iter().map(|v| v * v).sum()
}

pub fn levenberg_marquardt<P: LmProblem>(
    problem: &P,
    initial: &[f64],
    options: LmOptions,
) -> Result<LmSolution, FitFailure> {
    let m = problem.n_points();
    let n = problem.n_params();
    if m < n {
        return Err(FitFailure::TooFewPoints { needed: n, got: m });
    }
    let mut p = initial.to_vec();
    problem.clamp(&mut p);
    let mut r = vec![0.0; m];
    let mut chi2 = chi2_of(problem, &p, &mut r);
    if !chi2.is_finite() {
        return Err(FitFailure::InvalidInput("non-finite residuals at start".into()));
    }
    let mut jac = DMatrix::zeros(m, n);
    let mut trial = vec![0.0; n];
    let mut r_trial = vec![0.0; m];
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < options.max_iterations {
        iterations += 1;
        problem.jacobian(&p, &mut jac);
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let g = &jt * DVector::from_column_slice(&r);

        let mut improved = false;
        for _ in 0..40 {
            let mut a = jtj.clone();
            for i in 0..n {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-300);
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&g)) else {
                lambda *= 10.0;
                continue;
            };
            for i in 0..n {
                trial[i] = p[i] + step[i];
            }
            problem.clamp(&mut trial);
            let c = chi2_of(problem, &trial, &mut r_trial);
            if c.is_finite() && c <= chi2 {
                let rel_f = (chi2 - c) / chi2.max(f64::MIN_POSITIVE);
                let rel_x = p
                    .iter()
                    .zip(&trial)
                    .map(|(a, b)| (a - b).abs() / a.abs().max(1e-300))
                    .fold(0.0, f64::max);
                p.copy_from_slice(&trial);
                std::mem::swap(&mut r, &mut r_trial);
                chi2 = c;
                lambda = (lambda * 0.3).max(1e-12);
                improved = true;
                if rel_f <= options.ftol || rel_x <= options.xtol || chi2 == 0.0 {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
            if lambda > 1e16 {
                break;
            }
        }
        if converged || !improved {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(FitFailure::NotConverged {
            iterations,
            best: p,
        });
    }
    problem.jacobian(&p, &mut jac);
    let jtj = jac.transpose() * &jac;
    let covariance = jtj
        .clone()
        .try_inverse()
        .ok_or_else(|| FitFailure::Singular { best: p.clone() })?;
    Ok(LmSolution {
        params: p,
        chi2,
        covariance,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// y = a * exp(-k x)
    struct Decay {
        x: Vec<f64>,
        y: Vec<f64>,
    }

    impl LmProblem for Decay {
        fn n_params(&self) -> usize {
            2
        }
        fn n_points(&self) -> usize {
            self.x.len()
        }
        fn residuals(&self, p: &[f64], out: &mut [f64]) {
            for (i, (x, y)) in self.x.iter().zip(&self.y).enumerate() {
                out[i] = y - p[0] * (-p[1] * x).exp();
            }
        }
        fn jacobian(&self, p: &[f64], out: &mut DMatrix<f64>) {
            for (i, x) in self.x.iter().enumerate() {
                let e = (-p[1] * x).exp();
                out[(i, 0)] = e;
                out[(i, 1)] = -p[0] * x * e;
            }
        }
    }

    #[test]
    fn recovers_noiseless_decay() {
        let x: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let y = x.iter().map(|x| 3.0 * (-1.7 * x).exp()).collect();
        let sol = levenberg_marquardt(&Decay { x, y }, &[1.0, 0.5], LmOptions::default()).unwrap();
        assert!((sol.params[0] - 3.0).abs() < 1e-10);
        assert!((sol.params[1] - 1.7).abs() < 1e-10);
    }

    #[test]
    fn too_few_points() {
        let p = Decay {
            x: vec![1.0],
            y: vec![1.0],
        };
        assert!(matches!(
            levenberg_marquardt(&p, &[1.0, 1.0], LmOptions::default()),
            Err(FitFailure::TooFewPoints { .. })
        ));
    }
}
