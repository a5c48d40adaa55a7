use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::dist::log_sum_exp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightMethod {
    LogScore,
    PointMse,
}

impl std::fmt::Display for WeightMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            WeightMethod::LogScore => "log-score",
            WeightMethod::PointMse => "point-mse",
        })
    }
}

/// Convex combination weights over a model pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackingWeights {
    pub w: Vec<f64>,
    pub method: WeightMethod,
    pub lambda_reg: f64,
}

pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

impl StackingWeights {
    pub fn new(w: Vec<f64>, method: WeightMethod, lambda_reg: f64) -> Result<Self> {
        let weights = StackingWeights {
            w,
            method,
            lambda_reg,
        };
        weights.validate()?;
        Ok(weights)
    }

    pub fn uniform(k: usize, method: WeightMethod, lambda_reg: f64) -> Result<Self> {
        Self::new(vec![1.0 / k.max(1) as f64; k], method, lambda_reg)
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.w.is_empty() {
            return Err(Error::Contract("empty weight vector".into()));
        }
        if !(self.lambda_reg >= 0.0) {
            return Err(Error::Contract(format!(
                "lambda_reg must be >= 0, got {}",
                self.lambda_reg
            )));
        }
        let sum: f64 = self.w.iter().sum();
        if self.w.iter().any(|&x| !(x >= 0.0)) || (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(Error::Contract(format!(
                "weights {:?} are not on the probability simplex",
                self.w
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Converged once the objective moved less than `tolerance` over the last
    /// `window` iterations.
    pub tolerance: f64,
    pub window: usize,
    pub max_iter: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            tolerance: 1e-8,
            window: 50,
            max_iter: 100_000,
        }
    }
}

/// `log_dens[i][k]`: log predictive density of model `k` at observation `i`.
fn check_matrix(rows: &[Vec<f64>]) -> Result<usize> {
    let k = rows
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::Contract("no validation observations".into()))?;
    if k == 0 || rows.iter().any(|r| r.len() != k) {
        return Err(Error::Dimension(
            "prediction matrix rows must all have the same positive length".into(),
        ));
    }
    Ok(k)
}

/// `(1/N) sum_i log sum_k w_k p_k(y_i) - lambda sum_k w_k^2`.
pub fn logscore_objective(log_dens: &[Vec<f64>], w: &[f64], lambda_reg: f64) -> f64 {
    let log_w: Vec<f64> = w.iter().map(|x| x.ln()).collect();
    let mean = log_dens
        .iter()
        .map(|row| log_sum_exp(row.iter().zip(&log_w).map(|(l, lw)| l + lw)))
        .sum::<f64>()
        / log_dens.len() as f64;
    mean - lambda_reg * w.iter().map(|x| x * x).sum::<f64>()
}

fn logscore_gradient(log_dens: &[Vec<f64>], w: &[f64], lambda_reg: f64) -> Vec<f64> {
    let log_w: Vec<f64> = w.iter().map(|x| x.ln()).collect();
    let n = log_dens.len() as f64;
    let mut g = vec![0.0; w.len()];
    for row in log_dens {
        let lse = log_sum_exp(row.iter().zip(&log_w).map(|(l, lw)| l + lw));
        for (gk, l) in g.iter_mut().zip(row) {
            *gk += (l - lse).exp() / n;
        }
    }
    for (gk, wk) in g.iter_mut().zip(w) {
        *gk -= 2.0 * lambda_reg * wk;
    }
    g
}

fn converged(history: &[f64], cfg: &FitConfig) -> bool {
    history.len() > cfg.window
        && (history[history.len() - 1] - history[history.len() - 1 - cfg.window]).abs()
            < cfg.tolerance
}

/// Maximizes the regularized mean log score over the simplex by exponentiated
/// gradient ascent from the simplex center, with a backtracked step size.
pub fn fit_logscore_weights(
    log_dens: &[Vec<f64>],
    lambda_reg: f64,
    cfg: &FitConfig,
) -> Result<StackingWeights> {
    let k = check_matrix(log_dens)?;
    if !(lambda_reg >= 0.0) {
        return Err(Error::Contract(format!(
            "lambda_reg must be >= 0, got {lambda_reg}"
        )));
    }
    if log_dens
        .iter()
        .flatten()
        .any(|l| l.is_nan() || *l == f64::INFINITY)
    {
        return Err(Error::Fitting(
            "log densities must be finite or -inf".into(),
        ));
    }
    let mut w = vec![1.0 / k as f64; k];
    let mut f = logscore_objective(log_dens, &w, lambda_reg);
    if !f.is_finite() {
        return Err(Error::Fitting(
            "some observation has zero density under every model".into(),
        ));
    }
    let mut history = vec![f];
    let mut step = 1.0;
    for _ in 0..cfg.max_iter {
        if k == 1 || converged(&history, cfg) {
            break;
        }
        let g = logscore_gradient(log_dens, &w, lambda_reg);
        loop {
            // Multiplicative update normalized in log space.
            let logits: Vec<f64> = w
                .iter()
                .zip(&g)
                .map(|(wk, gk)| wk.ln() + step * gk)
                .collect();
            let z = log_sum_exp(logits.iter().copied());
            let cand: Vec<f64> = logits.iter().map(|l| (l - z).exp()).collect();
            let fc = logscore_objective(log_dens, &cand, lambda_reg);
            if fc.is_finite() && fc >= f {
                w = cand;
                f = fc;
                step *= 1.5;
                break;
            }
            step *= 0.5;
            if step < 1e-14 {
                break;
            }
        }
        history.push(f);
        if step < 1e-14 {
            break;
        }
    }
    finish(w, WeightMethod::LogScore, lambda_reg)
}

/// `sum_i (y_i - sum_k w_k mu_ik)^2 + lambda sum_k w_k^2`.
pub fn mse_objective(means: &[Vec<f64>], targets: &[f64], w: &[f64], lambda_reg: f64) -> f64 {
    means
        .iter()
        .zip(targets)
        .map(|(row, y)| (y - row.iter().zip(w).map(|(m, wk)| m * wk).sum::<f64>()).powi(2))
        .sum::<f64>()
        + lambda_reg * w.iter().map(|x| x * x).sum::<f64>()
}

/// Euclidean projection onto the probability simplex (sort-and-threshold).
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, uj) in u.iter().enumerate() {
        cumsum += uj;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

/// Minimizes the regularized squared error over the simplex by accelerated
/// projected gradient descent with adaptive restart, from the simplex center.
pub fn fit_pointpred_weights(
    means: &[Vec<f64>],
    targets: &[f64],
    lambda_reg: f64,
    cfg: &FitConfig,
) -> Result<StackingWeights> {
    let k = check_matrix(means)?;
    if means.len() != targets.len() {
        return Err(Error::Dimension(format!(
            "{} prediction rows for {} targets",
            means.len(),
            targets.len()
        )));
    }
    if !(lambda_reg >= 0.0) {
        return Err(Error::Contract(format!(
            "lambda_reg must be >= 0, got {lambda_reg}"
        )));
    }
    if means
        .iter()
        .flatten()
        .chain(targets)
        .any(|v| !v.is_finite())
    {
        return Err(Error::Fitting(
            "point predictions and targets must be finite".into(),
        ));
    }
    // Gradient 2 M^T (M w - y) + 2 lambda w; Lipschitz bound via the Gram trace.
    let lipschitz = 2.0 * means.iter().flatten().map(|m| m * m).sum::<f64>() + 2.0 * lambda_reg;
    let step = 1.0 / lipschitz.max(1e-300);
    let grad = |w: &[f64]| {
        let mut g: Vec<f64> = w.iter().map(|wk| 2.0 * lambda_reg * wk).collect();
        for (row, y) in means.iter().zip(targets) {
            let r = row.iter().zip(w).map(|(m, wk)| m * wk).sum::<f64>() - y;
            for (gk, m) in g.iter_mut().zip(row) {
                *gk += 2.0 * r * m;
            }
        }
        g
    };
    let mut w = vec![1.0 / k as f64; k];
    let mut f = mse_objective(means, targets, &w, lambda_reg);
    let mut y_pt = w.clone();
    let mut t = 1.0f64;
    let mut history = vec![f];
    for _ in 0..cfg.max_iter {
        if k == 1 || converged(&history, cfg) {
            break;
        }
        let g = grad(&y_pt);
        let next = project_simplex(
            &y_pt
                .iter()
                .zip(&g)
                .map(|(y, gk)| y - step * gk)
                .collect::<Vec<_>>(),
        );
        let fn_ = mse_objective(means, targets, &next, lambda_reg);
        if fn_ > f {
            // Restart momentum from the current iterate.
            y_pt = w.clone();
            t = 1.0;
            history.push(f);
            continue;
        }
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        y_pt = next
            .iter()
            .zip(&w)
            .map(|(a, b)| a + (t - 1.0) / t_next * (a - b))
            .collect();
        w = next;
        f = fn_;
        t = t_next;
        history.push(f);
    }
    finish(w, WeightMethod::PointMse, lambda_reg)
}

fn finish(w: Vec<f64>, method: WeightMethod, lambda_reg: f64) -> Result<StackingWeights> {
    let sum: f64 = w.iter().sum();
    StackingWeights::new(w.iter().map(|x| x / sum).collect(), method, lambda_reg)
}
