//! Small statistics helpers shared by the analysis and protocol layers.

use crate::error::{Error, Result};

/// Straight-line fit `y = intercept + slope * x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub intercept: f64,
    pub slope: f64,
    pub intercept_se: f64,
    pub slope_se: f64,
    pub chi2: f64,
    pub dof: usize,
    pub r_squared: f64,
}

impl LineFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }
}

fn weights_from(se: Option<&[f64]>, n: usize) -> (Vec<f64>, bool) {
    match se {
        Some(se) if se.iter().all(|s| s.is_finite() && *s > 0.0) => {
            (se.iter().map(|s| 1.0 / (s * s)).collect(), true)
        }
        _ => (vec![1.0; n], false),
    }
}

fn r_squared(y: &[f64], fitted: impl Iterator<Item = f64>) -> f64 {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let ss_res: f64 = y.iter().zip(fitted).map(|(v, f)| (v - f).powi(2)).sum();
    if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else {
        1.0
    }
}

/// Weighted least-squares line. Standard errors come from the weights and are
/// inflated by the Birge ratio when the scatter exceeds them. Falls back to an
/// unweighted fit when any standard error is zero or non-finite.
pub fn fit_line(x: &[f64], y: &[f64], y_se: Option<&[f64]>) -> Result<LineFit> {
    if x.len() != y.len() {
        return Err(Error::domain("x", "x and y lengths differ"));
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    let (w, weighted) = weights_from(y_se, n);
    let sw: f64 = w.iter().sum();
    let sx: f64 = w.iter().zip(x).map(|(w, x)| w * x).sum();
    let sy: f64 = w.iter().zip(y).map(|(w, y)| w * y).sum();
    let xm = sx / sw;
    let ym = sy / sw;
    let sxx: f64 = w.iter().zip(x).map(|(w, x)| w * (x - xm).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(Error::domain("x", "all abscissae are equal"));
    }
    let sxy: f64 = w
        .iter()
        .zip(x.iter().zip(y))
        .map(|(w, (x, y))| w * (x - xm) * (y - ym))
        .sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let chi2: f64 = w
        .iter()
        .zip(x.iter().zip(y))
        .map(|(w, (x, y))| w * (y - intercept - slope * x).powi(2))
        .sum();
    let dof = n - 2;
    let scale = if dof == 0 {
        1.0
    } else if weighted {
        (chi2 / dof as f64).max(1.0)
    } else {
        chi2 / dof as f64
    };
    let slope_var = scale / sxx;
    let intercept_var = scale * (1.0 / sw + xm * xm / sxx);
    Ok(LineFit {
        intercept,
        slope,
        intercept_se: intercept_var.sqrt(),
        slope_se: slope_var.sqrt(),
        chi2,
        dof,
        r_squared: r_squared(y, x.iter().map(|x| intercept + slope * x)),
    })
}

/// Weighted least-squares line through the origin. `r_squared` uses the
/// centred total sum of squares.
pub fn fit_proportional(x: &[f64], y: &[f64], y_se: Option<&[f64]>) -> Result<LineFit> {
    if x.len() != y.len() {
        return Err(Error::domain("x", "x and y lengths differ"));
    }
    let n = x.len();
    if n < 1 {
        return Err(Error::InsufficientData { needed: 1, got: n });
    }
    let (w, weighted) = weights_from(y_se, n);
    let sxx: f64 = w.iter().zip(x).map(|(w, x)| w * x * x).sum();
    if sxx <= 0.0 {
        return Err(Error::domain("x", "all abscissae are zero"));
    }
    let sxy: f64 = w.iter().zip(x.iter().zip(y)).map(|(w, (x, y))| w * x * y).sum();
    let slope = sxy / sxx;
    let chi2: f64 = w
        .iter()
        .zip(x.iter().zip(y))
        .map(|(w, (x, y))| w * (y - slope * x).powi(2))
        .sum();
    let dof = n - 1;
    let scale = if dof == 0 {
        1.0
    } else if weighted {
        (chi2 / dof as f64).max(1.0)
    } else {
        chi2 / dof as f64
    };
    Ok(LineFit {
        intercept: 0.0,
        slope,
        intercept_se: 0.0,
        slope_se: (scale / sxx).sqrt(),
        chi2,
        dof,
        r_squared: r_squared(y, x.iter().map(|x| slope * x)),
    })
}

/// Inverse-variance weighted mean and its standard error.
pub fn weighted_mean(values: &[f64], se: &[f64]) -> Option<(f64, f64)> {
    let mut sw = 0.0;
    let mut swv = 0.0;
    for (v, s) in values.iter().zip(se) {
        if s.is_finite() && *s > 0.0 {
            let w = 1.0 / (s * s);
            sw += w;
            swv += w * v;
        }
    }
    (sw > 0.0).then(|| (swv / sw, (1.0 / sw).sqrt()))
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (n - 1 denominator).
pub fn std_dev(values: &[f64]) -> f64 {
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m).powi(2)).sum();
    (ss / (values.len() as f64 - 1.0)).sqrt()
}

/// Median; reorders `values`.
pub fn median_in_place(values: &mut [f64]) -> f64 {
    let n = values.len();
    assert!(n > 0, "median of empty slice");
    let mid = n / 2;
    let (_, upper, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let lower = values[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

pub fn median(values: &[f64]) -> f64 {
    median_in_place(&mut values.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn line_recovers_exact_data() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|x| 2.5 - 0.5 * x).collect();
        let fit = fit_line(&x, &y, None).unwrap();
        assert_relative_eq!(fit.slope, -0.5, epsilon = 1e-12);
        assert_relative_eq!(fit.intercept, 2.5, epsilon = 1e-12);
        assert_relative_eq!(fit.r_squared, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn weighted_line_standard_errors_match_closed_form() {
        // Two points with unit errors: slope se = sqrt(2)/|dx| under exact fit.
        let fit = fit_line(&[0.0, 2.0], &[1.0, 3.0], Some(&[1.0, 1.0])).unwrap();
        assert_relative_eq!(fit.slope, 1.0);
        assert_relative_eq!(fit.slope_se, (2.0f64).sqrt() / 2.0, epsilon = 1e-12);
        assert_relative_eq!(fit.intercept_se, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn proportional_fit_is_ratio_average_for_relative_errors() {
        let x = [1.0, 2.0, 4.0];
        let y = [1.1, 2.0, 3.6];
        let se: Vec<f64> = x.to_vec();
        let fit = fit_proportional(&x, &y, Some(&se)).unwrap();
        assert_relative_eq!(fit.slope, (1.1 + 1.0 + 0.9) / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
    }

    #[test]
    fn weighted_mean_ignores_degenerate_errors() {
        let (m, se) = weighted_mean(&[1.0, 3.0, 100.0], &[1.0, 1.0, 0.0]).unwrap();
        assert_relative_eq!(m, 2.0);
        assert_relative_eq!(se, (0.5f64).sqrt());
    }
}
