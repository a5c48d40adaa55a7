use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bcnn::BcnnConfig;
use crate::dataset::{pad_cycle, DischargeCycle, NormalizationParams};
use crate::error::{Error, Result};
use crate::numeric::ops::{self, softplus, softplus_inverse};
use crate::numeric::{GaussianSpec, Graph, Tensor, Var};

/// Mean-field Gaussian posterior over one weight tensor; spread is `softplus(rho)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalParam {
    pub name: String,
    pub mu: Tensor,
    pub rho: Tensor,
}

impl VariationalParam {
    pub fn spread(&self) -> Tensor {
        self.rho.map(softplus)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub nll: f64,
    pub kl: f64,
}

/// A variational Bayesian CNN: two reparameterized convolutions, global
/// average pooling, two reparameterized dense layers and a Gaussian head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BcnnModel {
    pub config: BcnnConfig,
    pub params: Vec<VariationalParam>,
    #[serde(default)]
    pub normalization: Option<NormalizationParams>,
    #[serde(default)]
    pub target: TargetScaling,
    #[serde(default)]
    pub history: Vec<EpochRecord>,
}

/// Fixed affine map from the network's head to capacity units:
/// `mean = offset + scale * raw_mean`, `log_var = raw_log_var + 2 ln scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetScaling {
    pub offset: f64,
    pub scale: f64,
}

impl Default for TargetScaling {
    fn default() -> Self {
        TargetScaling {
            offset: 0.0,
            scale: 1.0,
        }
    }
}

impl TargetScaling {
    /// Mean and population standard deviation of the labels; unit scale when
    /// the labels are constant.
    pub fn fit(labels: &[f64]) -> Self {
        if labels.is_empty() {
            return Self::default();
        }
        let n = labels.len() as f64;
        let offset = labels.iter().sum::<f64>() / n;
        let sd = (labels.iter().map(|y| (y - offset).powi(2)).sum::<f64>() / n).sqrt();
        TargetScaling {
            offset,
            scale: if sd > 1e-12 && sd.is_finite() {
                sd
            } else {
                1.0
            },
        }
    }

    fn apply(&self, mean: f64, log_var: f64) -> (f64, f64) {
        (
            self.offset + self.scale * mean,
            log_var + 2.0 * self.scale.ln(),
        )
    }
}

/// One standard-normal draw per weight, in parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightNoise(pub Vec<Tensor>);

impl WeightNoise {
    pub fn draw<R: Rng + ?Sized>(model: &BcnnModel, rng: &mut R) -> Self {
        WeightNoise(
            model
                .params
                .iter()
                .map(|p| p.mu.map(|_| StandardNormal.sample(rng)))
                .collect(),
        )
    }

    pub fn zeros(model: &BcnnModel) -> Self {
        WeightNoise(
            model
                .params
                .iter()
                .map(|p| Tensor::zeros(p.mu.shape()))
                .collect(),
        )
    }
}

pub fn init_model<R: Rng + ?Sized>(config: &BcnnConfig, rng: &mut R) -> Result<BcnnModel> {
    config.validate()?;
    let rho0 = softplus_inverse(config.init_spread * config.prior.scale);
    let params = config
        .param_shapes()
        .into_iter()
        .map(|(name, shape)| {
            let is_bias = name.ends_with(".bias");
            let mu = if is_bias {
                Tensor::zeros(&shape)
            } else {
                let fan_in = if shape.len() == 3 {
                    shape[1] * shape[2]
                } else {
                    shape[0]
                };
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt())
                    .map_err(|e| Error::Config(e.to_string()))?;
                Tensor::zeros(&shape).map(|_| normal.sample(rng))
            };
            Ok(VariationalParam {
                name,
                rho: Tensor::filled(&shape, rho0),
                mu,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BcnnModel {
        config: config.clone(),
        params,
        normalization: None,
        target: TargetScaling::default(),
        history: Vec::new(),
    })
}

impl BcnnModel {
    pub fn parameter_count(&self) -> usize {
        2 * self.params.iter().map(|p| p.mu.len()).sum::<usize>()
    }

    /// Concrete weights for one posterior draw.
    pub fn sample_weights(&self, noise: &WeightNoise) -> Result<Vec<Tensor>> {
        if noise.0.len() != self.params.len() {
            return Err(Error::Dimension(format!(
                "{} noise tensors for {} parameters",
                noise.0.len(),
                self.params.len()
            )));
        }
        self.params
            .iter()
            .zip(&noise.0)
            .map(|(p, e)| ops::reparam_sample(&p.mu, &p.rho, e))
            .collect()
    }

    /// Head outputs `(mean, log variance)` for a `[L, C]` or `[B, L, C]` input
    /// under one weight draw.
    pub fn forward_raw(&self, input: &Tensor, noise: &WeightNoise) -> Result<Vec<(f64, f64)>> {
        let weights = self.sample_weights(noise)?;
        self.forward_with_weights(input, &weights)
    }

    pub(crate) fn forward_with_weights(
        &self,
        input: &Tensor,
        weights: &[Tensor],
    ) -> Result<Vec<(f64, f64)>> {
        self.check_input(input)?;
        let n_conv = self.config.conv.len();
        let mut h = input.clone();
        for i in 0..n_conv {
            h = ops::relu(&ops::conv1d_forward(
                &h,
                &weights[2 * i],
                &weights[2 * i + 1],
            )?);
            check_finite(&h, i + 1)?;
        }
        h = ops::global_avg_pool(&h)?;
        let d = 2 * n_conv;
        h = ops::dense_forward(&h, &weights[d], &weights[d + 1])?;
        if self.config.dense_relu {
            h = ops::relu(&h);
        }
        check_finite(&h, n_conv + 3)?;
        let out = ops::dense_forward(&h, &weights[d + 2], &weights[d + 3])?;
        check_finite(&out, n_conv + 4)?;
        Ok(out
            .values()
            .chunks(2)
            .map(|c| self.target.apply(c[0], c[1]))
            .collect())
    }

    /// One stochastic forward pass: `N(mean, exp(log_var))` for a single input.
    pub fn forward_predict(&self, input: &Tensor, noise: &WeightNoise) -> Result<GaussianSpec> {
        if input.shape().len() != 2 {
            return Err(Error::Dimension(format!(
                "forward_predict takes one [L, C] input, got {:?}",
                input.shape()
            )));
        }
        let (mean, log_var) = self.forward_raw(input, noise)?[0];
        head_gaussian(mean, log_var, self.config.conv.len() + 5)
    }

    /// Padded, normalized features of a raw cycle under this model's own
    /// normalization reference.
    pub fn features(&self, cycle: &DischargeCycle) -> Result<Tensor> {
        let norm = self
            .normalization
            .as_ref()
            .ok_or_else(|| Error::Contract("model carries no normalization reference".into()))?;
        norm.apply(&pad_cycle(cycle, self.config.input_len)?)
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        let s = input.shape();
        let tail = &s[s.len().saturating_sub(2)..];
        if tail != [self.config.input_len, self.config.input_channels] {
            return Err(Error::Dimension(format!(
                "input {:?} does not match configured [{}, {}]",
                s, self.config.input_len, self.config.input_channels
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: BcnnModel = serde_json::from_str(&text)?;
        model.config.validate()?;
        let expected = model.config.param_shapes();
        let ok = expected.len() == model.params.len()
            && expected.iter().zip(&model.params).all(|((n, s), p)| {
                *n == p.name && p.mu.shape() == s.as_slice() && p.rho.shape() == s.as_slice()
            });
        if !ok
            || model
                .params
                .iter()
                .any(|p| !p.rho.is_finite() || !p.mu.is_finite())
        {
            return Err(Error::Architecture(format!(
                "{} does not match its configured architecture",
                path.display()
            )));
        }
        Ok(model)
    }
}

pub(crate) fn head_gaussian(mean: f64, log_var: f64, layer: usize) -> Result<GaussianSpec> {
    let sigma = (0.5 * log_var).exp();
    if !mean.is_finite() || !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::NonFiniteActivation { layer });
    }
    Ok(GaussianSpec { mu: mean, sigma })
}

fn check_finite(t: &Tensor, layer: usize) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteActivation { layer })
    }
}

/// Graph handles produced by [`BcnnModel::build_graph`].
pub(crate) struct GraphParams {
    pub mu: Vec<Var>,
    pub rho: Vec<Var>,
}

impl BcnnModel {
    pub(crate) fn graph_params(&self, g: &mut Graph) -> GraphParams {
        GraphParams {
            mu: self.params.iter().map(|p| g.param(p.mu.clone())).collect(),
            rho: self.params.iter().map(|p| g.param(p.rho.clone())).collect(),
        }
    }

    /// Differentiable forward pass. Returns the sampled weight nodes and the
    /// `(mean, log_var)` head columns.
    pub(crate) fn build_forward(
        &self,
        g: &mut Graph,
        gp: &GraphParams,
        input: Var,
        noise: &WeightNoise,
    ) -> Result<(Vec<Var>, Var, Var)> {
        let mut weights = Vec::with_capacity(self.params.len());
        for (i, e) in noise.0.iter().enumerate() {
            let eps = g.constant(e.clone());
            weights.push(g.reparam(gp.mu[i], gp.rho[i], eps)?);
        }
        let n_conv = self.config.conv.len();
        let mut h = input;
        for i in 0..n_conv {
            let c = g.conv1d(h, weights[2 * i], weights[2 * i + 1])?;
            h = g.relu(c);
        }
        h = g.global_avg_pool(h)?;
        let d = 2 * n_conv;
        h = g.dense(h, weights[d], weights[d + 1])?;
        if self.config.dense_relu {
            h = g.relu(h);
        }
        let out = g.dense(h, weights[d + 2], weights[d + 3])?;
        let raw_mean = g.column(out, 0)?;
        let raw_log_var = g.column(out, 1)?;
        let rows = g.value(raw_mean).shape().to_vec();
        let scaled = g.scale(raw_mean, self.target.scale);
        let offset = g.constant(Tensor::filled(&rows, self.target.offset));
        let mean = g.add(scaled, offset)?;
        let shift = g.constant(Tensor::filled(&rows, 2.0 * self.target.scale.ln()));
        let log_var = g.add(raw_log_var, shift)?;
        Ok((weights, mean, log_var))
    }
}
