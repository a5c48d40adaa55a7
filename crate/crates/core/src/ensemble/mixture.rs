use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bcnn::GaussianPrediction;
use crate::dataset::DischargeCycle;
use crate::ensemble::pool::ModelPool;
use crate::ensemble::weights::StackingWeights;
use crate::error::{Error, Result};
use crate::numeric::dist::{log_sum_exp, std_normal_cdf};

/// Weighted Gaussian mixture: the fused predictive distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixturePrediction {
    pub components: Vec<GaussianPrediction>,
    pub weights: StackingWeights,
}

/// Bisection stops once the bracket is narrower than this.
pub const QUANTILE_TOLERANCE: f64 = 1e-9;

impl MixturePrediction {
    pub fn new(components: Vec<GaussianPrediction>, weights: StackingWeights) -> Result<Self> {
        weights.validate()?;
        if components.len() != weights.len() {
            return Err(Error::Contract(format!(
                "{} components for {} weights",
                components.len(),
                weights.len()
            )));
        }
        if components
            .iter()
            .any(|c| !(c.sigma > 0.0) || !c.mu.is_finite())
        {
            return Err(Error::Contract(
                "mixture components need finite mu and sigma > 0".into(),
            ));
        }
        Ok(MixturePrediction {
            components,
            weights,
        })
    }

    fn pairs(&self) -> impl Iterator<Item = (f64, &GaussianPrediction)> + Clone {
        self.weights.w.iter().copied().zip(&self.components)
    }

    pub fn mean(&self) -> f64 {
        self.pairs().map(|(w, c)| w * c.mu).sum()
    }

    /// `sum_k w_k (sigma_k^2 + mu_k^2) - mean^2`, evaluated in the centered
    /// form `sum_k w_k (sigma_k^2 + (mu_k - mean)^2)` to avoid cancellation.
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.pairs()
            .map(|(w, c)| w * (c.variance() + (c.mu - m).powi(2)))
            .sum()
    }

    pub fn log_pdf(&self, y: f64) -> f64 {
        log_sum_exp(self.pairs().map(|(w, c)| w.ln() + c.spec().log_prob(y)))
    }

    pub fn pdf(&self, y: f64) -> f64 {
        self.log_pdf(y).exp()
    }

    pub fn cdf(&self, y: f64) -> f64 {
        self.pairs()
            .map(|(w, c)| w * std_normal_cdf((y - c.mu) / c.sigma))
            .sum::<f64>()
            .clamp(0.0, 1.0)
    }

    /// Smallest `y` with `cdf(y) >= p`, by bisection on a bracket ten
    /// component spreads beyond the extreme means.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Domain(format!(
                "quantile level must lie in (0, 1), got {p}"
            )));
        }
        let s_max = self.components.iter().map(|c| c.sigma).fold(0.0, f64::max);
        let mut lo = self
            .components
            .iter()
            .map(|c| c.mu)
            .fold(f64::INFINITY, f64::min)
            - 10.0 * s_max;
        let mut hi = self
            .components
            .iter()
            .map(|c| c.mu)
            .fold(f64::NEG_INFINITY, f64::max)
            + 10.0 * s_max;
        for _ in 0..200 {
            if hi - lo <= QUANTILE_TOLERANCE {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Central interval holding `level` of the predictive mass.
    pub fn interval(&self, level: f64) -> Result<(f64, f64)> {
        let tail = 0.5 * (1.0 - level);
        Ok((self.quantile(tail)?, self.quantile(1.0 - tail)?))
    }
}

pub fn mixture_pdf(mixture: &MixturePrediction, y: f64) -> f64 {
    mixture.pdf(y)
}

pub fn mixture_cdf(mixture: &MixturePrediction, y: f64) -> f64 {
    mixture.cdf(y)
}

pub fn mixture_variance(mixture: &MixturePrediction) -> f64 {
    mixture.variance()
}

/// How each member's Monte Carlo draws enter the mixture.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MixtureMode {
    /// One moment-matched Gaussian per member: a K-component mixture.
    #[default]
    MomentMatched,
    /// Every draw of every member is a component with weight `w_k / S`.
    PerDraw,
}

/// Fuses per-member predictions `per_model[k][i]` into one mixture per input.
pub fn compose(
    per_model: &[Vec<GaussianPrediction>],
    weights: &StackingWeights,
) -> Result<Vec<MixturePrediction>> {
    weights.validate()?;
    if per_model.len() != weights.len() {
        return Err(Error::Contract(format!(
            "{} pool members for {} weights",
            per_model.len(),
            weights.len()
        )));
    }
    let n = per_model[0].len();
    if per_model.iter().any(|p| p.len() != n) {
        return Err(Error::Dimension(
            "members predicted different input counts".into(),
        ));
    }
    (0..n)
        .map(|i| MixturePrediction::new(per_model.iter().map(|p| p[i]).collect(), weights.clone()))
        .collect()
}

/// `sum_k w_k mu_k` for every input; identical to the mixture means.
pub fn compose_point(
    per_model: &[Vec<GaussianPrediction>],
    weights: &StackingWeights,
) -> Result<Vec<f64>> {
    Ok(compose(per_model, weights)?
        .iter()
        .map(MixturePrediction::mean)
        .collect())
}

/// Stacked predictive mixtures of a pool for raw cycles.
pub fn stack_predict<R: Rng + ?Sized>(
    pool: &ModelPool,
    weights: &StackingWeights,
    cycles: &[&DischargeCycle],
    input_noise: f64,
    mode: MixtureMode,
    rng: &mut R,
) -> Result<Vec<MixturePrediction>> {
    if pool.len() != weights.len() {
        return Err(Error::Contract(format!(
            "{} pool members for {} weights",
            pool.len(),
            weights.len()
        )));
    }
    match mode {
        MixtureMode::MomentMatched => compose(&pool.predict(cycles, input_noise, rng)?, weights),
        MixtureMode::PerDraw => {
            let seeds: Vec<u64> = pool.members().iter().map(|_| rng.random()).collect();
            let draws: Vec<Vec<Vec<GaussianPrediction>>> = pool
                .members()
                .par_iter()
                .zip(seeds)
                .map(|(m, seed)| {
                    let feats = cycles
                        .iter()
                        .map(|c| m.model.features(c))
                        .collect::<Result<Vec<_>>>()?;
                    let refs: Vec<_> = feats.iter().collect();
                    let s = m.model.config.mc_predict_samples;
                    if s < 2 {
                        return Err(Error::Contract(format!(
                            "mc_predict_samples must be >= 2, got {s}"
                        )));
                    }
                    let raw = m.model.predict_draws(
                        &refs,
                        s,
                        input_noise,
                        &mut ChaCha8Rng::seed_from_u64(seed),
                    )?;
                    Ok(raw
                        .into_iter()
                        .map(|d| d.into_iter().map(GaussianPrediction::from_spec).collect())
                        .collect())
                })
                .collect::<Result<_>>()?;
            (0..cycles.len())
                .map(|i| {
                    let mut components = Vec::new();
                    let mut w = Vec::new();
                    for (k, member) in draws.iter().enumerate() {
                        let s = member[i].len() as f64;
                        components.extend_from_slice(&member[i]);
                        w.extend(std::iter::repeat_n(weights.w[k] / s, member[i].len()));
                    }
                    let expanded = StackingWeights {
                        w,
                        method: weights.method,
                        lambda_reg: weights.lambda_reg,
                    };
                    MixturePrediction::new(components, expanded)
                })
                .collect()
        }
    }
}

/// Point forecast `sum_k w_k mu_k(x)`.
pub fn point_predict<R: Rng + ?Sized>(
    pool: &ModelPool,
    weights: &StackingWeights,
    cycles: &[&DischargeCycle],
    input_noise: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if pool.len() != weights.len() {
        return Err(Error::Contract(format!(
            "{} pool members for {} weights",
            pool.len(),
            weights.len()
        )));
    }
    compose_point(&pool.predict(cycles, input_noise, rng)?, weights)
}
