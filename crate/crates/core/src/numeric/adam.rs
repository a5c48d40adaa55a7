use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment accumulators for bias-corrected Adam, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Self {
        AdamState {
            config,
            step: 0,
            first: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            second: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update in place. Gradients are validated before any
    /// parameter is touched, so a rejected step leaves everything unchanged.
    pub fn update(
        &mut self,
        params: &mut [Tensor],
        grads: &[Tensor],
        names: &[&str],
    ) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::Dimension(format!(
                "adam tracks {} tensors, got {} params and {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            p.expect_same_shape(g)?;
            p.expect_same_shape(&self.first[i])?;
            if !g.is_finite() {
                let param = names
                    .get(i)
                    .map_or_else(|| format!("#{i}"), |n| n.to_string());
                return Err(Error::Optimization { param });
            }
        }

        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            let (p, m, v) = (p.values_mut(), m.values_mut(), v.values_mut());
            for (j, &gj) in g.values().iter().enumerate() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                p[j] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![Tensor::vector(vec![1.0, -2.0])];
        let mut st = AdamState::new(AdamConfig::default(), &p);
        st.update(&mut p, &[Tensor::zeros(&[2])], &["w"]).unwrap();
        assert_eq!(p[0].values(), &[1.0, -2.0]);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m_hat = 1, v_hat = 1 => delta = lr / (1 + eps).
        let mut p = vec![Tensor::scalar(0.5)];
        let mut st = AdamState::new(AdamConfig::default(), &p);
        st.update(&mut p, &[Tensor::scalar(1.0)], &["w"]).unwrap();
        let expect = 0.5 - 0.01 / (1.0 + 1e-8);
        assert!((p[0].item() - expect).abs() < 1e-15);
    }

    #[test]
    fn converges_on_quadratic_like_scalar_reference() {
        // f(x) = (x - 3)^2 compared with an independent scalar loop.
        let mut p = vec![Tensor::scalar(-1.0)];
        let mut st = AdamState::new(AdamConfig::default(), &p);
        let (mut x, mut m, mut v) = (-1.0f64, 0.0f64, 0.0f64);
        for t in 1..=1000 {
            let g = 2.0 * (p[0].item() - 3.0);
            st.update(&mut p, &[Tensor::scalar(g)], &["x"]).unwrap();

            let gr = 2.0 * (x - 3.0);
            m = 0.9 * m + 0.1 * gr;
            v = 0.999 * v + 0.001 * gr * gr;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= 0.01 * mh / (vh.sqrt() + 1e-8);
        }
        assert_eq!(p[0].item(), x);
        assert!((x - 3.0).abs() < 0.05, "x = {x}");
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = vec![Tensor::scalar(1.0), Tensor::scalar(2.0)];
        let mut st = AdamState::new(AdamConfig::default(), &p);
        let err = st
            .update(
                &mut p,
                &[
                    Tensor::scalar(0.1),
                    Tensor::from_parts(vec![1], vec![f64::NAN]),
                ],
                &["a", "b"],
            )
            .unwrap_err();
        assert!(matches!(err, Error::Optimization { ref param } if param == "b"));
        assert_eq!(p[0].item(), 1.0);
        assert_eq!(st.step_count(), 0);
    }
}
