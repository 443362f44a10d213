//! Least-squares exponential rate fitting.
//!
//! A rate fit models `|y| ≈ C·exp(slope·x)` by regressing `ln|y|` on `x`.
//! Samples at or below the noise floor carry no information about the rate and
//! are dropped before fitting.

use serde::Serialize;

use crate::error::{Error, Result};

/// Result of fitting `ln|y| = intercept + slope·x`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Number of samples used in the regression.
    pub used: usize,
    /// Number of samples dropped for being at or below the noise floor.
    pub excluded: usize,
}

impl RateFit {
    /// Value of the fitted model at `x`.
    pub fn predict(&self, x: f64) -> f64 {
        (self.intercept + self.slope * x).exp()
    }
}

/// Outcome of a fit that is allowed to find nothing measurable.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum FitOutcome {
    Fitted(RateFit),
    /// Fewer than three samples rose above the floor.
    BelowNoiseFloor { above_floor: usize, floor: f64 },
}

impl FitOutcome {
    pub fn fitted(&self) -> Option<&RateFit> {
        match self {
            FitOutcome::Fitted(f) => Some(f),
            FitOutcome::BelowNoiseFloor { .. } => None,
        }
    }
}

/// Fit `ln|y|` against `x` using only samples with `|y| > noise_floor`.
///
/// Fails with [`Error::TooFewSamples`] when fewer than three samples survive.
pub fn fit_exponential(xs: &[f64], ys: &[f64], noise_floor: f64) -> Result<RateFit> {
    if xs.len() != ys.len() {
        return Err(Error::InvalidParameter(format!(
            "sample lengths differ: {} vs {}",
            xs.len(),
            ys.len()
        )));
    }
    let (px, py): (Vec<f64>, Vec<f64>) = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| x.is_finite() && y.is_finite() && y.abs() > noise_floor && y.abs() > 0.0)
        .map(|(&x, &y)| (x, y.abs().ln()))
        .unzip();
    let excluded = xs.len() - px.len();
    if px.len() < 3 {
        return Err(Error::TooFewSamples { needed: 3, got: px.len() });
    }
    let (slope, intercept, r_squared) = linear_regression(&px, &py);
    Ok(RateFit { slope, intercept, r_squared, used: px.len(), excluded })
}

/// Like [`fit_exponential`] but reports an empty fit as an outcome instead of an error.
pub fn fit_exponential_outcome(xs: &[f64], ys: &[f64], noise_floor: f64) -> FitOutcome {
    match fit_exponential(xs, ys, noise_floor) {
        Ok(f) => FitOutcome::Fitted(f),
        Err(Error::TooFewSamples { got, .. }) => {
            FitOutcome::BelowNoiseFloor { above_floor: got, floor: noise_floor }
        }
        Err(_) => FitOutcome::BelowNoiseFloor { above_floor: 0, floor: noise_floor },
    }
}

/// Ordinary least squares `y = a + b x`. Returns `(b, a, r²)`.
///
/// When `y` has no variance the fit is exact and `r²` is reported as 1.
pub fn linear_regression(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| {
            let r = y - intercept - slope * x;
            r * r
        })
        .sum();
    let r_squared = if syy <= 1e-24 * n * (1.0 + my * my) {
        1.0
    } else {
        1.0 - ss_res / syy
    };
    (slope, intercept, r_squared)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exact_exponential_is_recovered() {
        let xs: Vec<f64> = (0..10).map(f64::from).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (-0.5 * x).exp()).collect();
        let fit = fit_exponential(&xs, &ys, 0.0).unwrap();
        assert_relative_eq!(fit.slope, -0.5, epsilon = 1e-12);
        assert_relative_eq!(fit.r_squared, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn floor_excludes_samples() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys = [1e-1, 1e-2, 1e-3, 1e-17];
        let fit = fit_exponential(&xs, &ys, 1e-15).unwrap();
        assert_eq!(fit.used, 3);
        assert_eq!(fit.excluded, 1);
        assert_relative_eq!(fit.slope, -std::f64::consts::LN_10, epsilon = 1e-12);
    }

    #[test]
    fn too_few_samples() {
        let err = fit_exponential(&[1.0, 2.0], &[1.0, 2.0], 0.0).unwrap_err();
        assert_eq!(err, Error::TooFewSamples { needed: 3, got: 2 });
        let outcome = fit_exponential_outcome(&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0], 1e-14);
        assert!(matches!(outcome, FitOutcome::BelowNoiseFloor { above_floor: 0, .. }));
    }

    #[test]
    fn constant_data_has_zero_slope() {
        let fit = fit_exponential(&[0.0, 1.0, 2.0], &[2.0, 2.0, 2.0], 0.0).unwrap();
        assert_eq!(fit.slope, 0.0);
        assert_eq!(fit.r_squared, 1.0);
    }
}
