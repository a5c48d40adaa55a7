//! Accuracy, proper scoring rules, calibration and sharpness of forecasts.

mod scores;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bcnn::GaussianPrediction;
use crate::ensemble::{MixturePrediction, StackingWeights, WeightMethod};
use crate::error::{Error, Result};

pub use scores::{
    calibration_curve, crps, crps_gaussian, crps_gaussian_prediction, crps_mixture, default_levels,
    miscalibration_area, mse, nll, r2, sharpness, Nll, MIN_CALIBRATION_OBSERVATIONS,
};

/// A predictive distribution for one observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Forecast {
    Gaussian(GaussianPrediction),
    Mixture(MixturePrediction),
}

impl Forecast {
    pub fn mean(&self) -> f64 {
        match self {
            Forecast::Gaussian(g) => g.mu,
            Forecast::Mixture(m) => m.mean(),
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            Forecast::Gaussian(g) => g.variance(),
            Forecast::Mixture(m) => m.variance(),
        }
    }

    pub fn log_pdf(&self, y: f64) -> f64 {
        match self {
            Forecast::Gaussian(g) => g.spec().log_prob(y),
            Forecast::Mixture(m) => m.log_pdf(y),
        }
    }

    pub fn cdf(&self, y: f64) -> f64 {
        match self {
            Forecast::Gaussian(g) => g.spec().cdf(y),
            Forecast::Mixture(m) => m.cdf(y),
        }
    }

    /// Bisection quantile, treating a Gaussian as a one-component mixture.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        match self {
            Forecast::Gaussian(g) => single(g).quantile(p),
            Forecast::Mixture(m) => m.quantile(p),
        }
    }

    pub fn crps(&self, y: f64) -> f64 {
        match self {
            Forecast::Gaussian(g) => crps_gaussian(g.mu, g.sigma, y),
            Forecast::Mixture(m) => crps_mixture(m, y),
        }
    }

    pub fn interval(&self, level: f64) -> Result<(f64, f64)> {
        let tail = 0.5 * (1.0 - level);
        Ok((self.quantile(tail)?, self.quantile(1.0 - tail)?))
    }
}

fn single(g: &GaussianPrediction) -> MixturePrediction {
    MixturePrediction {
        components: vec![*g],
        weights: StackingWeights {
            w: vec![1.0],
            method: WeightMethod::LogScore,
            lambda_reg: 0.0,
        },
    }
}

impl From<GaussianPrediction> for Forecast {
    fn from(g: GaussianPrediction) -> Self {
        Forecast::Gaussian(g)
    }
}

impl From<MixturePrediction> for Forecast {
    fn from(m: MixturePrediction) -> Self {
        Forecast::Mixture(m)
    }
}

/// Forecasts paired with observed capacities.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastSeries {
    records: Vec<(Forecast, f64)>,
}

impl ForecastSeries {
    pub fn new(records: Vec<(Forecast, f64)>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Contract("empty forecast series".into()));
        }
        if let Some(i) = records.iter().position(|(_, y)| !y.is_finite()) {
            return Err(Error::Contract(format!("observation {i} is not finite")));
        }
        Ok(ForecastSeries { records })
    }

    pub fn from_parts(forecasts: Vec<Forecast>, observed: &[f64]) -> Result<Self> {
        if forecasts.len() != observed.len() {
            return Err(Error::Dimension(format!(
                "{} forecasts for {} observations",
                forecasts.len(),
                observed.len()
            )));
        }
        Self::new(
            forecasts
                .into_iter()
                .zip(observed.iter().copied())
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &(Forecast, f64)> {
        self.records.iter()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub n: usize,
    pub mse: f64,
    pub r2: f64,
    /// Per-observation mean negative log likelihood.
    pub nll: f64,
    pub nll_sum: f64,
    pub crps: f64,
    pub miscalibration_area: f64,
    pub sharpness: f64,
}

/// Column order of [`EvaluationReport::csv_row`].
pub const REPORT_COLUMNS: [&str; 8] = [
    "mse",
    "r2",
    "nll",
    "crps",
    "miscalibration_area",
    "sharpness",
    "nll_sum",
    "n",
];

impl EvaluationReport {
    pub fn csv_row(&self) -> Vec<String> {
        vec![
            self.mse.to_string(),
            self.r2.to_string(),
            self.nll.to_string(),
            self.crps.to_string(),
            self.miscalibration_area.to_string(),
            self.sharpness.to_string(),
            self.nll_sum.to_string(),
            self.n.to_string(),
        ]
    }
}

/// Full report with the calibration curve it was computed from.
pub fn evaluate(
    series: &ForecastSeries,
    levels: &[f64],
) -> Result<(EvaluationReport, Vec<(f64, f64)>)> {
    let curve = calibration_curve(series, levels)?;
    let score = nll(series)?;
    let report = EvaluationReport {
        n: series.len(),
        mse: mse(series),
        r2: r2(series)?,
        nll: score.mean,
        nll_sum: score.sum,
        crps: crps(series)?,
        miscalibration_area: miscalibration_area(&curve),
        sharpness: sharpness(series),
    };
    Ok((report, curve))
}

/// Two-column `p,observed` file for plotting.
pub fn write_calibration_csv(path: impl AsRef<Path>, curve: &[(f64, f64)]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["p", "observed"])?;
    for (p, o) in curve {
        w.write_record([p.to_string(), o.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
