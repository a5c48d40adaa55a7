use crate::bcnn::GaussianPrediction;
use crate::ensemble::MixturePrediction;
use crate::error::{Error, Result};
use crate::metrics::ForecastSeries;
use crate::numeric::dist::{std_normal_cdf, std_normal_pdf};

const INV_SQRT_PI: f64 = 0.564_189_583_547_756_3;

pub fn mse(series: &ForecastSeries) -> f64 {
    series
        .iter()
        .map(|(f, y)| (y - f.mean()).powi(2))
        .sum::<f64>()
        / series.len() as f64
}

/// Coefficient of determination `1 - SS_res / SS_tot`.
pub fn r2(series: &ForecastSeries) -> Result<f64> {
    let n = series.len() as f64;
    let mean_y = series.iter().map(|(_, y)| y).sum::<f64>() / n;
    let ss_tot: f64 = series.iter().map(|(_, y)| (y - mean_y).powi(2)).sum();
    if !(ss_tot > 0.0) {
        return Err(Error::DegenerateVariance(
            "observations are constant, R^2 is undefined".into(),
        ));
    }
    let ss_res: f64 = series.iter().map(|(f, y)| (y - f.mean()).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Negative log predictive density, as a sum and per observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nll {
    pub sum: f64,
    pub mean: f64,
}

pub fn nll(series: &ForecastSeries) -> Result<Nll> {
    let mut sum = 0.0;
    for (i, (f, y)) in series.iter().enumerate() {
        let lp = f.log_pdf(*y);
        if !lp.is_finite() {
            return Err(Error::Numeric(format!(
                "log density {lp} at observation {i}"
            )));
        }
        sum -= lp;
    }
    Ok(Nll {
        sum,
        mean: sum / series.len() as f64,
    })
}

/// `E|X|` for `X ~ N(m, s^2)`.
fn abs_moment(m: f64, s: f64) -> f64 {
    if s == 0.0 {
        return m.abs();
    }
    let z = m / s;
    m * (2.0 * std_normal_cdf(z) - 1.0) + 2.0 * s * std_normal_pdf(z)
}

/// Closed-form CRPS of `N(mu, sigma^2)` at `y`.
pub fn crps_gaussian(mu: f64, sigma: f64, y: f64) -> f64 {
    if sigma == 0.0 {
        return (y - mu).abs();
    }
    let z = (y - mu) / sigma;
    sigma * (z * (2.0 * std_normal_cdf(z) - 1.0) + 2.0 * std_normal_pdf(z) - INV_SQRT_PI)
}

/// Closed-form CRPS of a Gaussian mixture: `E|X - y| - E|X - X'| / 2`.
pub fn crps_mixture(mixture: &MixturePrediction, y: f64) -> f64 {
    let w = &mixture.weights.w;
    let c = &mixture.components;
    let mut first = 0.0;
    let mut second = 0.0;
    for j in 0..c.len() {
        first += w[j] * abs_moment(y - c[j].mu, c[j].sigma);
        for k in 0..c.len() {
            let s = (c[j].variance() + c[k].variance()).sqrt();
            second += w[j] * w[k] * abs_moment(c[j].mu - c[k].mu, s);
        }
    }
    (first - 0.5 * second).max(0.0)
}

pub fn crps_gaussian_prediction(p: &GaussianPrediction, y: f64) -> f64 {
    crps_gaussian(p.mu, p.sigma, y)
}

/// Mean CRPS over the series.
pub fn crps(series: &ForecastSeries) -> Result<f64> {
    let mut total = 0.0;
    for (i, (f, y)) in series.iter().enumerate() {
        let c = f.crps(*y);
        if !c.is_finite() {
            return Err(Error::Numeric(format!("CRPS {c} at observation {i}")));
        }
        total += c;
    }
    Ok(total / series.len() as f64)
}

/// `sqrt(mean predictive variance)`.
pub fn sharpness(series: &ForecastSeries) -> f64 {
    (series.iter().map(|(f, _)| f.variance()).sum::<f64>() / series.len() as f64).sqrt()
}

/// Default calibration levels 0.01, 0.02, ..., 0.99.
pub fn default_levels() -> Vec<f64> {
    (1..=99).map(|i| i as f64 / 100.0).collect()
}

pub const MIN_CALIBRATION_OBSERVATIONS: usize = 20;

/// `(p, fraction of observations at or below their p-quantile)` per level.
pub fn calibration_curve(series: &ForecastSeries, levels: &[f64]) -> Result<Vec<(f64, f64)>> {
    if series.len() < MIN_CALIBRATION_OBSERVATIONS {
        return Err(Error::Contract(format!(
            "calibration needs at least {MIN_CALIBRATION_OBSERVATIONS} observations, got {}",
            series.len()
        )));
    }
    if levels.is_empty() || levels.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Contract(
            "calibration levels must be increasing and non-empty".into(),
        ));
    }
    let t = series.len() as f64;
    levels
        .iter()
        .map(|&p| {
            let mut hits = 0usize;
            for (f, y) in series.iter() {
                if *y <= f.quantile(p)? {
                    hits += 1;
                }
            }
            Ok((p, hits as f64 / t))
        })
        .collect()
}

/// Trapezoidal integral of `|observed - p|` over the level grid.
pub fn miscalibration_area(curve: &[(f64, f64)]) -> f64 {
    curve
        .windows(2)
        .map(|w| {
            let (p0, o0) = w[0];
            let (p1, o1) = w[1];
            0.5 * (p1 - p0) * ((o0 - p0).abs() + (o1 - p1).abs())
        })
        .sum()
}
