use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bcnn::model::{head_gaussian, BcnnModel, WeightNoise};
use crate::bcnn::train::stack_inputs;
use crate::dataset::inject_noise;
use crate::error::{Error, Result};
use crate::numeric::{GaussianSpec, Tensor};

/// Moment-matched predictive distribution of one model for one input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrediction {
    pub mu: f64,
    pub sigma: f64,
    /// Mean of the head variances over draws.
    pub aleatoric_var: f64,
    /// Variance of the head means over draws.
    pub epistemic_var: f64,
}

impl GaussianPrediction {
    pub fn variance(&self) -> f64 {
        self.sigma * self.sigma
    }

    pub fn spec(&self) -> GaussianSpec {
        GaussianSpec {
            mu: self.mu,
            sigma: self.sigma,
        }
    }

    pub fn from_spec(spec: GaussianSpec) -> Self {
        GaussianPrediction {
            mu: spec.mu,
            sigma: spec.sigma,
            aleatoric_var: spec.sigma * spec.sigma,
            epistemic_var: 0.0,
        }
    }
}

/// Law of total variance over draws: mean of means, and mean head variance
/// plus the (population) variance of the means.
pub fn moment_match(draws: &[GaussianSpec]) -> Result<GaussianPrediction> {
    if draws.len() < 2 {
        return Err(Error::Contract(format!(
            "moment matching needs at least 2 draws, got {}",
            draws.len()
        )));
    }
    let s = draws.len() as f64;
    let mu = draws.iter().map(|d| d.mu).sum::<f64>() / s;
    let aleatoric_var = draws.iter().map(|d| d.sigma * d.sigma).sum::<f64>() / s;
    let epistemic_var = draws.iter().map(|d| (d.mu - mu).powi(2)).sum::<f64>() / s;
    Ok(GaussianPrediction {
        mu,
        sigma: (aleatoric_var + epistemic_var).sqrt(),
        aleatoric_var,
        epistemic_var,
    })
}

/// Inputs are evaluated in chunks of this many per forward pass.
const PREDICT_CHUNK: usize = 64;

impl BcnnModel {
    /// Raw per-draw head distributions, `result[input][draw]`.
    ///
    /// Each draw samples one weight set shared by all inputs. When
    /// `input_noise > 0`, every weight set is evaluated at an antithetic pair
    /// `x + e` and `x - e` with `e ~ N(0, input_noise^2)` per input, giving
    /// `2 * draws` results. The pair cancels the odd-order terms of the noise,
    /// so the predictive mean does not drift with the noise level and, for a
    /// network that is linear around `x`, the variance cannot shrink as the
    /// noise grows. Input noise comes from a separate stream seeded from
    /// `rng`, so the weight draws are the same whatever the noise level.
    pub fn predict_draws<R: Rng + ?Sized>(
        &self,
        inputs: &[&Tensor],
        draws: usize,
        input_noise: f64,
        rng: &mut R,
    ) -> Result<Vec<Vec<GaussianSpec>>> {
        let per_draw = if input_noise > 0.0 { 2 } else { 1 };
        let mut out = vec![Vec::with_capacity(draws * per_draw); inputs.len()];
        let head_layer = self.config.conv.len() + 5;
        let mut noise_rng = ChaCha8Rng::seed_from_u64(rng.random());
        for _ in 0..draws {
            let noise = WeightNoise::draw(self, rng);
            let weights = self.sample_weights(&noise)?;
            for (c, chunk) in inputs.chunks(PREDICT_CHUNK).enumerate() {
                let batches = if input_noise > 0.0 {
                    let mut plus = Vec::with_capacity(chunk.len());
                    let mut minus = Vec::with_capacity(chunk.len());
                    for x in chunk {
                        let shifted = inject_noise(x, input_noise, &mut noise_rng)?;
                        minus.push(x.zip_map(&shifted, |a, b| 2.0 * a - b)?);
                        plus.push(shifted);
                    }
                    vec![
                        stack_inputs(&plus.iter().collect::<Vec<_>>())?,
                        stack_inputs(&minus.iter().collect::<Vec<_>>())?,
                    ]
                } else {
                    vec![stack_inputs(chunk)?]
                };
                for batch in &batches {
                    let heads = self.forward_with_weights(batch, &weights)?;
                    for (j, (mean, log_var)) in heads.into_iter().enumerate() {
                        out[c * PREDICT_CHUNK + j].push(head_gaussian(mean, log_var, head_layer)?);
                    }
                }
            }
        }
        Ok(out)
    }

    /// Monte Carlo predictive distribution with `mc_predict_samples` draws.
    pub fn predict_distribution<R: Rng + ?Sized>(
        &self,
        input: &Tensor,
        rng: &mut R,
    ) -> Result<GaussianPrediction> {
        Ok(self.predict_batch(&[input], 0.0, rng)?.remove(0))
    }

    /// [`Self::predict_distribution`] over many inputs with optional input noise.
    pub fn predict_batch<R: Rng + ?Sized>(
        &self,
        inputs: &[&Tensor],
        input_noise: f64,
        rng: &mut R,
    ) -> Result<Vec<GaussianPrediction>> {
        let s = self.config.mc_predict_samples;
        if s < 2 {
            return Err(Error::Contract(format!(
                "mc_predict_samples must be >= 2, got {s}"
            )));
        }
        self.predict_draws(inputs, s, input_noise, rng)?
            .iter()
            .map(|d| moment_match(d))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_draw_moments() {
        let draws: Vec<GaussianSpec> = [1.0, 2.0, 3.0]
            .iter()
            .map(|&mu| GaussianSpec { mu, sigma: 1.0 })
            .collect();
        let p = moment_match(&draws).unwrap();
        assert!((p.mu - 2.0).abs() < 1e-15);
        assert!((p.variance() - (1.0 + 2.0 / 3.0)).abs() < 1e-14);
        assert!((p.aleatoric_var - 1.0).abs() < 1e-15);
        assert!((p.epistemic_var - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn single_draw_is_a_contract_error() {
        let d = [GaussianSpec {
            mu: 0.0,
            sigma: 1.0,
        }];
        assert!(matches!(moment_match(&d), Err(Error::Contract(_))));
    }

    #[test]
    fn noise_pairs_keep_draws_aligned_and_variance_growing() {
        use crate::bcnn::{init_model, BcnnConfig};
        let cfg = BcnnConfig {
            input_len: 40,
            input_channels: 3,
            mc_predict_samples: 20,
            ..BcnnConfig::default()
        };
        let model = init_model(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut g = ChaCha8Rng::seed_from_u64(2);
        let inputs: Vec<Tensor> = (0..5)
            .map(|_| {
                Tensor::new(vec![40, 3], (0..120).map(|_| g.random::<f64>()).collect()).unwrap()
            })
            .collect();
        let refs: Vec<&Tensor> = inputs.iter().collect();
        let at = |sigma: f64| {
            model
                .predict_draws(&refs, 20, sigma, &mut ChaCha8Rng::seed_from_u64(3))
                .unwrap()
        };
        let clean = at(0.0);
        assert_eq!(clean[0].len(), 20);
        assert_eq!(at(0.1)[0].len(), 40);
        // A vanishing noise level reproduces the clean draws pairwise.
        let tiny = at(1e-12);
        for (c, t) in clean[0].iter().zip(tiny[0].chunks(2)) {
            assert!((c.mu - t[0].mu).abs() < 1e-9 && (c.mu - t[1].mu).abs() < 1e-9);
        }
        let variance = |sigma: f64| -> Vec<f64> {
            at(sigma)
                .iter()
                .map(|d| moment_match(d).unwrap().variance())
                .collect()
        };
        let mut prev = variance(0.0);
        for sigma in [0.01, 0.05, 0.1, 0.2] {
            let v = variance(sigma);
            for (a, b) in prev.iter().zip(&v) {
                assert!(b >= a, "sigma {sigma}: {b} < {a}");
            }
            prev = v;
        }
    }
}
