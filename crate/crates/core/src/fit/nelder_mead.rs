use super::FitFailure;

#[derive(Debug, Clone, Copy)]
pub struct NmOptions {
    pub max_evaluations: usize,
    /// Converged when the simplex's objective spread falls below this.
    pub ftol: f64,
    /// Converged when every vertex lies within this distance of the best.
    pub xtol: f64,
}

impl Default for NmOptions {
    fn default() -> Self {
        Self {
            max_evaluations: 20_000,
            ftol: 1e-10,
            xtol: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NmSolution {
    pub params: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
}

/// Minimises `f` from `start` with initial simplex edge lengths `scale`.
/// Non-finite objective values are treated as +inf.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    start: &[f64],
    scale: &[f64],
    options: NmOptions,
) -> Result<NmSolution, FitFailure> {
    let n = start.len();
    let mut eval = |x: &[f64], count: &mut usize| {
        *count += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let mut evaluations = 0;
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(start.to_vec());
    for i in 0..n {
        let mut v = start.to_vec();
        v[i] += scale[i];
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| eval(v, &mut evaluations)).collect();
    if !values[0].is_finite() {
        return Err(FitFailure::InvalidInput("objective not finite at start".into()));
    }

    loop {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let spread = values[n] - values[0];
        let size = simplex[1..]
            .iter()
            .flat_map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if spread.abs() <= options.ftol * (1.0 + values[0].abs()) && size <= options.xtol {
            return Ok(NmSolution {
                params: simplex[0].clone(),
                value: values[0],
                evaluations,
            });
        }
        if evaluations >= options.max_evaluations {
            return Err(FitFailure::NotConverged {
                iterations: evaluations,
                best: simplex[0].clone(),
            });
        }

        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|v| v[j]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n])
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };
        let reflected = along(1.0);
        let fr = eval(&reflected, &mut evaluations);
        if fr < values[0] {
            let expanded = along(2.0);
            let fe = eval(&expanded, &mut evaluations);
            if fe < fr {
                simplex[n] = expanded;
                values[n] = fe;
            } else {
                simplex[n] = reflected;
                values[n] = fr;
            }
        } else if fr < values[n - 1] {
            simplex[n] = reflected;
            values[n] = fr;
        } else {
            let (contracted, fc) = if fr < values[n] {
                let c = along(0.5);
                let v = eval(&c, &mut evaluations);
                (c, v)
            } else {
                let c = along(-0.5);
                let v = eval(&c, &mut evaluations);
                (c, v)
            };
            if fc < values[n].min(fr) {
                simplex[n] = contracted;
                values[n] = fc;
            } else {
                for i in 1..=n {
                    let shrunk: Vec<f64> = simplex[i]
                        .iter()
                        .zip(&simplex[0])
                        .map(|(v, b)| b + 0.5 * (v - b))
                        .collect();
                    values[i] = eval(&shrunk, &mut evaluations);
                    simplex[i] = shrunk;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimises_rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let sol = nelder_mead(f, &[-1.2, 1.0], &[0.5, 0.5], NmOptions::default()).unwrap();
        assert!((sol.params[0] - 1.0).abs() < 1e-6);
        assert!((sol.params[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn reports_best_iterate_on_budget_exhaustion() {
        let f = |x: &[f64]| (x[0] - 3.0).powi(2);
        let opts = NmOptions {
            max_evaluations: 5,
            ..NmOptions::default()
        };
        match nelder_mead(f, &[0.0], &[1.0], opts) {
            Err(FitFailure::NotConverged { best, .. }) => assert_eq!(best.len(), 1),
            other => panic!("unexpected {other:?}"),
        }
    }
}
