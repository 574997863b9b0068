use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::fit::{levenberg_marquardt, FitFailure, LmOptions, LmProblem};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumPoint {
    pub detuning_hz: f64,
    pub nu_i_hz: f64,
    pub stderr_hz: f64,
}

impl SpectrumPoint {
    pub fn new(detuning_hz: f64, nu_i_hz: f64, stderr_hz: f64) -> Self {
        Self {
            detuning_hz,
            nu_i_hz,
            stderr_hz,
        }
    }
}

/// `offset + amplitude (w/2)^2 / ((x - center)^2 + (w/2)^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LorentzianFit {
    pub center: f64,
    pub fwhm: f64,
    pub amplitude: f64,
    pub offset: f64,
    pub center_se: f64,
    pub fwhm_se: f64,
    pub amplitude_se: f64,
    pub offset_se: f64,
    pub chi2: f64,
    pub dof: usize,
    /// False when the fit fell back to equal weights.
    pub weighted: bool,
}

impl LorentzianFit {
    pub fn eval(&self, x: f64) -> f64 {
        lorentzian(x, self.center, self.fwhm, self.amplitude, self.offset)
    }
}

pub fn lorentzian(x: f64, center: f64, fwhm: f64, amplitude: f64, offset: f64) -> f64 {
    let h2 = 0.25 * fwhm * fwhm;
    let d = x - center;
    offset + amplitude * h2 / (d * d + h2)
}

pub const MIN_POINTS: usize = 5;

/// Data in normalised units: `x' = (x - mid) / span`, `y' = y / y_scale`.
struct Problem {
    x: Vec<f64>,
    y: Vec<f64>,
    inv_s: Vec<f64>,
    w_bounds: (f64, f64),
}

impl LmProblem for Problem {
    fn n_params(&self) -> usize {
        4
    }

    fn n_points(&self) -> usize {
        self.x.len()
    }

    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        for i in 0..self.x.len() {
            out[i] = (self.y[i] - lorentzian(self.x[i], p[0], p[1], p[2], p[3])) * self.inv_s[i];
        }
    }

    fn jacobian(&self, p: &[f64], out: &mut DMatrix<f64>) {
        let (c, w, a) = (p[0], p[1], p[2]);
        let h = 0.5 * w;
        for i in 0..self.x.len() {
            let d = self.x[i] - c;
            let den = d * d + h * h;
            let s = self.inv_s[i];
            out[(i, 0)] = a * h * h * 2.0 * d / (den * den) * s;
            out[(i, 1)] = a * h * d * d / (den * den) * s;
            out[(i, 2)] = h * h / den * s;
            out[(i, 3)] = s;
        }
    }

    fn clamp(&self, p: &mut [f64]) {
        p[1] = p[1].clamp(self.w_bounds.0, self.w_bounds.1);
    }
}

/// Weighted Levenberg-Marquardt Lorentzian fit.
///
/// Uses inverse-variance weights when every standard error is positive and
/// finite, equal weights otherwise. Parameter errors come from the curvature
/// matrix, scaled by `max(1, chi2/dof)` when weighted and by `chi2/dof`
/// when unweighted.
pub fn fit_lorentzian(points: &[SpectrumPoint]) -> Result<LorentzianFit, FitFailure> {
    let n = points.len();
    if n < MIN_POINTS {
        return Err(FitFailure::TooFewPoints {
            needed: MIN_POINTS,
            got: n,
        });
    }
    if points
        .iter()
        .any(|p| !(p.detuning_hz.is_finite() && p.nu_i_hz.is_finite()))
    {
        return Err(FitFailure::InvalidInput("non-finite spectrum point".into()));
    }
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.detuning_hz.total_cmp(&b.detuning_hz));
    let x_min = pts[0].detuning_hz;
    let x_max = pts[n - 1].detuning_hz;
    let span = x_max - x_min;
    if !(span > 0.0) {
        return Err(FitFailure::InvalidInput("detunings do not span an interval".into()));
    }
    let mid = 0.5 * (x_min + x_max);
    let y_scale = pts.iter().map(|p| p.nu_i_hz.abs()).fold(0.0, f64::max);
    if y_scale == 0.0 {
        return Err(FitFailure::InvalidInput("spectrum is identically zero".into()));
    }
    let weighted = pts.iter().all(|p| p.stderr_hz.is_finite() && p.stderr_hz > 0.0);
    let min_spacing = pts
        .windows(2)
        .map(|w| w[1].detuning_hz - w[0].detuning_hz)
        .filter(|d| *d > 0.0)
        .fold(f64::INFINITY, f64::min);
    let w_bounds = (min_spacing / 10.0 / span, 10.0);

    let problem = Problem {
        x: pts.iter().map(|p| (p.detuning_hz - mid) / span).collect(),
        y: pts.iter().map(|p| p.nu_i_hz / y_scale).collect(),
        inv_s: pts
            .iter()
            .map(|p| if weighted { y_scale / p.stderr_hz } else { 1.0 })
            .collect(),
        w_bounds,
    };
    let start = initial_guess(&problem.x, &problem.y);
    let sol = levenberg_marquardt(
        &problem,
        &start,
        LmOptions {
            max_iterations: 1000,
            ..LmOptions::default()
        },
    )
    .map_err(|e| denormalise_failure(e, mid, span, y_scale))?;
    let p = &sol.params;
    let at_bound = |v: f64, b: f64| (v - b).abs() <= 1e-9 * b;
    for bound in [w_bounds.0, w_bounds.1] {
        if at_bound(p[1], bound) {
            return Err(FitFailure::AtBound {
                name: "fwhm".into(),
                value: p[1] * span,
                bound: bound * span,
            });
        }
    }
    if !(p[2] > 0.0) {
        return Err(FitFailure::InvalidInput(format!(
            "fitted amplitude {} is not positive",
            p[2] * y_scale
        )));
    }
    let dof = n - 4;
    let chi2 = sol.chi2;
    let red = if dof > 0 { chi2 / dof as f64 } else { 1.0 };
    let scale = if weighted { red.max(1.0) } else { red };
    let se = |i: usize| (sol.covariance[(i, i)] * scale).max(0.0).sqrt();
    let (amp_se, center_se) = (se(2), se(0));
    if !(amp_se < p[2] && center_se < 1.0) {
        return Err(FitFailure::Unresolved {
            name: "amplitude".into(),
            value: p[2] * y_scale,
            stderr: amp_se * y_scale,
        });
    }
    Ok(LorentzianFit {
        center: p[0] * span + mid,
        fwhm: p[1] * span,
        amplitude: p[2] * y_scale,
        offset: p[3] * y_scale,
        center_se: se(0) * span,
        fwhm_se: se(1) * span,
        amplitude_se: se(2) * y_scale,
        offset_se: se(3) * y_scale,
        chi2: if weighted { chi2 } else { chi2 * y_scale * y_scale },
        dof,
        weighted,
    })
}

fn denormalise_failure(e: FitFailure, mid: f64, span: f64, y_scale: f64) -> FitFailure {
    let fix = |b: Vec<f64>| {
        if b.len() == 4 {
            vec![b[0] * span + mid, b[1] * span, b[2] * y_scale, b[3] * y_scale]
        } else {
            b
        }
    };
    match e {
        FitFailure::NotConverged { iterations, best } => FitFailure::NotConverged {
            iterations,
            best: fix(best),
        },
        FitFailure::Singular { best } => FitFailure::Singular { best: fix(best) },
        other => other,
    }
}

/// Centre at the maximum, amplitude max - min, offset min, width from the
/// half-maximum crossings on either side.
fn initial_guess(x: &[f64], y: &[f64]) -> [f64; 4] {
    let (imax, &ymax) = y
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty");
    let ymin = y.iter().copied().fold(f64::INFINITY, f64::min);
    let amplitude = ymax - ymin;
    let half = ymin + 0.5 * amplitude;
    let crossing = |range: &mut dyn Iterator<Item = usize>| -> Option<f64> {
        let mut prev = imax;
        for i in range {
            if y[i] <= half {
                let f = (y[prev] - half) / (y[prev] - y[i]);
                return Some(x[prev] + f * (x[i] - x[prev]));
            }
            prev = i;
        }
        None
    };
    let left = crossing(&mut (0..imax).rev());
    let right = crossing(&mut (imax + 1..x.len()));
    let c = x[imax];
    let fwhm = match (left, right) {
        (Some(l), Some(r)) => r - l,
        (Some(l), None) => 2.0 * (c - l),
        (None, Some(r)) => 2.0 * (r - c),
        (None, None) => 0.5,
    };
    [c, fwhm.max(1e-6), amplitude.max(1e-12), ymin]
}
