use rand::seq::SliceRandom;
use rand::Rng;

use crate::bcnn::model::{BcnnModel, EpochRecord, TargetScaling, WeightNoise};
use crate::dataset::CycleTensor;
use crate::error::{Error, Result};
use crate::numeric::{AdamState, Graph, Tensor, Var};

/// A built ELBO graph with handles to the variational parameters.
pub struct ElboGraph {
    pub graph: Graph,
    pub mu: Vec<Var>,
    pub rho: Vec<Var>,
    pub loss: Var,
    /// Mean Gaussian negative log-likelihood over the batch (averaged over draws).
    pub nll: f64,
    /// Monte Carlo `log q(w) - log p(w)` (averaged over draws).
    pub kl: f64,
}

impl ElboGraph {
    pub fn loss_value(&self) -> f64 {
        self.graph.value(self.loss).item()
    }

    pub fn mu_grads(&self) -> Vec<Tensor> {
        self.mu.iter().map(|&v| self.graph.grad(v)).collect()
    }

    pub fn rho_grads(&self) -> Vec<Tensor> {
        self.rho.iter().map(|&v| self.graph.grad(v)).collect()
    }
}

/// Stacks `[L, C]` feature tensors into `[B, L, C]`.
pub fn stack_inputs(inputs: &[&Tensor]) -> Result<Tensor> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::Contract("empty batch".into()))?;
    let mut values = Vec::with_capacity(first.len() * inputs.len());
    for t in inputs {
        first.expect_same_shape(t)?;
        values.extend_from_slice(t.values());
    }
    let mut shape = vec![inputs.len()];
    shape.extend_from_slice(first.shape());
    Tensor::new(shape, values)
}

/// Negative ELBO for one batch:
/// `-(1/B) sum_i log N(y_i; mu(x_i), exp(s(x_i))) + kl_weight * (log q(w) - log p(w))`,
/// averaged over one weight draw per entry of `draws`.
pub fn elbo_loss(
    model: &BcnnModel,
    inputs: &Tensor,
    targets: &[f64],
    draws: &[WeightNoise],
    kl_weight: f64,
) -> Result<ElboGraph> {
    if targets.is_empty() || draws.is_empty() {
        return Err(Error::Contract(
            "elbo needs a non-empty batch and at least one draw".into(),
        ));
    }
    if inputs.shape().len() != 3 || inputs.shape()[0] != targets.len() {
        return Err(Error::Dimension(format!(
            "batch input {:?} does not match {} targets",
            inputs.shape(),
            targets.len()
        )));
    }
    let batch = targets.len() as f64;
    let prior = model.config.prior;
    let mut g = Graph::new();
    let gp = model.graph_params(&mut g);
    let x = g.constant(inputs.clone());
    let y = g.constant(Tensor::vector(targets.to_vec()));

    let mut terms = Vec::with_capacity(draws.len());
    let (mut nll_sum, mut kl_sum) = (0.0, 0.0);
    for noise in draws {
        let (weights, mean, log_var) = model.build_forward(&mut g, &gp, x, noise)?;
        let half = g.scale(log_var, 0.5);
        let sigma = g.exp(half);
        let ll = g.gaussian_log_prob(y, mean, sigma)?;
        let mut term = g.scale(ll, -1.0 / batch);
        nll_sum += -g.value(ll).item() / batch;
        if kl_weight != 0.0 {
            for (i, &w) in weights.iter().enumerate() {
                let spread = g.softplus(gp.rho[i]);
                let log_q = g.gaussian_log_prob(w, gp.mu[i], spread)?;
                let log_p = g.laplace_log_prob(w, prior.loc, prior.scale)?;
                kl_sum += g.value(log_q).item() - g.value(log_p).item();
                let neg_p = g.scale(log_p, -kl_weight);
                let pos_q = g.scale(log_q, kl_weight);
                term = g.add(term, pos_q)?;
                term = g.add(term, neg_p)?;
            }
        }
        terms.push(term);
    }
    let mut loss = terms[0];
    for &t in &terms[1..] {
        loss = g.add(loss, t)?;
    }
    let n = draws.len() as f64;
    if draws.len() > 1 {
        loss = g.scale(loss, 1.0 / n);
    }
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Err(Error::Numeric(format!("non-finite ELBO loss {value}")));
    }
    Ok(ElboGraph {
        mu: gp.mu,
        rho: gp.rho,
        graph: g,
        loss,
        nll: nll_sum / n,
        kl: kl_sum / n,
    })
}

impl BcnnModel {
    fn param_names(&self) -> Vec<String> {
        self.params
            .iter()
            .map(|p| format!("{}.mu", p.name))
            .chain(self.params.iter().map(|p| format!("{}.rho", p.name)))
            .collect()
    }

    /// Minibatch stochastic variational inference with Adam on `(mu, rho)`.
    /// Pairs are reshuffled every epoch; the final short batch is kept.
    /// A fresh model first fixes its target scaling from the training labels.
    pub fn train<R: Rng + ?Sized>(
        &mut self,
        pairs: &[CycleTensor],
        rng: &mut R,
    ) -> Result<Vec<EpochRecord>> {
        let cfg = self.config.clone();
        if pairs.len() < cfg.batch_size {
            return Err(Error::InsufficientData(format!(
                "{} training pairs for batch size {}",
                pairs.len(),
                cfg.batch_size
            )));
        }
        if cfg.epochs == 0 {
            return Ok(Vec::new());
        }
        if self.history.is_empty() && cfg.standardize_targets {
            let labels: Vec<f64> = pairs.iter().map(|p| p.label).collect();
            self.target = TargetScaling::fit(&labels);
        }
        let kl_weight = cfg.kl_weight.resolve(pairs.len());
        let names = self.param_names();
        let names: Vec<&str> = names.iter().map(String::as_str).collect();
        let mut params: Vec<Tensor> = self
            .params
            .iter()
            .map(|p| p.mu.clone())
            .chain(self.params.iter().map(|p| p.rho.clone()))
            .collect();
        let mut adam = AdamState::new(cfg.adam, &params);
        let k = self.params.len();
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        let mut records = Vec::with_capacity(cfg.epochs);

        for epoch in 0..cfg.epochs {
            order.shuffle(rng);
            let (mut loss_acc, mut nll_acc, mut kl_acc, mut batches) = (0.0, 0.0, 0.0, 0usize);
            for (batch_no, chunk) in order.chunks(cfg.batch_size).enumerate() {
                let feats: Vec<&Tensor> = chunk.iter().map(|&i| &pairs[i].features).collect();
                let inputs = stack_inputs(&feats)?;
                let targets: Vec<f64> = chunk.iter().map(|&i| pairs[i].label).collect();
                let draws: Vec<WeightNoise> = (0..cfg.mc_train_samples)
                    .map(|_| WeightNoise::draw(self, rng))
                    .collect();
                let diverged = || Error::Training {
                    epoch,
                    batch: batch_no,
                };
                let mut elbo = elbo_loss(self, &inputs, &targets, &draws, kl_weight)
                    .map_err(|_| diverged())?;
                elbo.graph.backward(elbo.loss)?;
                let grads: Vec<Tensor> = elbo
                    .mu_grads()
                    .into_iter()
                    .chain(elbo.rho_grads())
                    .collect();
                adam.update(&mut params, &grads, &names)
                    .map_err(|_| diverged())?;
                for (i, p) in self.params.iter_mut().enumerate() {
                    p.mu = params[i].clone();
                    p.rho = params[k + i].clone();
                }
                loss_acc += elbo.loss_value();
                nll_acc += elbo.nll;
                kl_acc += elbo.kl;
                batches += 1;
            }
            let b = batches as f64;
            records.push(EpochRecord {
                epoch: self.history.len() + epoch,
                loss: loss_acc / b,
                nll: nll_acc / b,
                kl: kl_acc / b,
            });
        }
        self.history.extend(records.iter().cloned());
        Ok(records)
    }
}
