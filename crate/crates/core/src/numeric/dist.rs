use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Normal distribution parameterized by mean and standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianSpec {
    pub mu: f64,
    pub sigma: f64,
}

impl GaussianSpec {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() || !mu.is_finite() {
            return Err(Error::Domain(format!(
                "gaussian needs finite mu and sigma > 0, got mu={mu}, sigma={sigma}"
            )));
        }
        Ok(GaussianSpec { mu, sigma })
    }

    pub fn variance(&self) -> f64 {
        self.sigma * self.sigma
    }

    pub fn log_prob(&self, y: f64) -> f64 {
        let z = (y - self.mu) / self.sigma;
        -LN_SQRT_2PI - self.sigma.ln() - 0.5 * z * z
    }

    pub fn pdf(&self, y: f64) -> f64 {
        self.log_prob(y).exp()
    }

    pub fn cdf(&self, y: f64) -> f64 {
        std_normal_cdf((y - self.mu) / self.sigma)
    }
}

/// Laplace distribution with location and scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaplaceSpec {
    pub loc: f64,
    pub scale: f64,
}

impl LaplaceSpec {
    pub fn new(loc: f64, scale: f64) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() || !loc.is_finite() {
            return Err(Error::Domain(format!(
                "laplace needs finite loc and scale > 0, got loc={loc}, scale={scale}"
            )));
        }
        Ok(LaplaceSpec { loc, scale })
    }

    pub fn log_prob(&self, x: f64) -> f64 {
        -(2.0 * self.scale).ln() - (x - self.loc).abs() / self.scale
    }
}

impl Default for LaplaceSpec {
    fn default() -> Self {
        LaplaceSpec {
            loc: 0.0,
            scale: 1.0,
        }
    }
}

/// Log density of `N(mu, sigma^2)` at `y`. Validates `sigma`.
pub fn gaussian_log_prob(spec: GaussianSpec, y: f64) -> Result<f64> {
    GaussianSpec::new(spec.mu, spec.sigma).map(|s| s.log_prob(y))
}

/// Log density of `Laplace(loc, scale)` at `x`. Validates `scale`.
pub fn laplace_log_prob(spec: LaplaceSpec, x: f64) -> Result<f64> {
    LaplaceSpec::new(spec.loc, spec.scale).map(|s| s.log_prob(x))
}

pub fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z - LN_SQRT_2PI).exp()
}

pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Numerically stable `log(sum(exp(xs)))`; `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(xs: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + xs.into_iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}
