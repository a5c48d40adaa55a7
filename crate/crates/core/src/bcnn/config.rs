use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{AdamConfig, LaplaceSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub filters: usize,
    pub width: usize,
}

/// How the KL term of the ELBO is scaled against the per-pair likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum KlWeight {
    /// `1 / number of training pairs`.
    InverseTrainingPairs,
    Constant(f64),
}

impl KlWeight {
    pub fn resolve(self, training_pairs: usize) -> f64 {
        match self {
            KlWeight::InverseTrainingPairs => 1.0 / training_pairs.max(1) as f64,
            KlWeight::Constant(w) => w,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BcnnConfig {
    pub input_len: usize,
    pub input_channels: usize,
    pub conv: Vec<ConvSpec>,
    pub dense_units: usize,
    /// ReLU after the hidden dense layer (convolutions always use ReLU).
    pub dense_relu: bool,
    pub prior: LaplaceSpec,
    /// Initial posterior spread as a fraction of the prior scale.
    pub init_spread: f64,
    pub adam: AdamConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub mc_train_samples: usize,
    pub mc_predict_samples: usize,
    pub kl_weight: KlWeight,
    /// Learn the head in label-standardized units (an exact reparameterization).
    pub standardize_targets: bool,
    /// Reject any architecture that differs from the reference table.
    pub strict: bool,
    pub seed: u64,
}

/// Output shapes (without the batch axis) of the reference architecture.
pub const REFERENCE_SHAPES: [&[usize]; 6] = [&[369, 16], &[368, 8], &[8], &[8], &[16], &[2]];
pub const REFERENCE_PARAMS: usize = 1300;

impl Default for BcnnConfig {
    fn default() -> Self {
        BcnnConfig {
            input_len: 371,
            input_channels: 4,
            conv: vec![
                ConvSpec {
                    filters: 16,
                    width: 3,
                },
                ConvSpec {
                    filters: 8,
                    width: 2,
                },
            ],
            dense_units: 16,
            dense_relu: true,
            prior: LaplaceSpec::default(),
            init_spread: 0.1,
            adam: AdamConfig::default(),
            epochs: 500,
            batch_size: 16,
            mc_train_samples: 1,
            mc_predict_samples: 100,
            kl_weight: KlWeight::InverseTrainingPairs,
            standardize_targets: true,
            strict: false,
            seed: 0,
        }
    }
}

impl BcnnConfig {
    /// Output shape of every layer: convolutions, pooling, flatten, dense, head.
    pub fn layer_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = Vec::new();
        let mut len = self.input_len;
        let mut ch = self.input_channels;
        for c in &self.conv {
            len = (len + 1).saturating_sub(c.width);
            ch = c.filters;
            shapes.push(vec![len, ch]);
        }
        shapes.push(vec![ch]);
        shapes.push(vec![ch]);
        shapes.push(vec![self.dense_units]);
        shapes.push(vec![2]);
        shapes
    }

    /// Shapes of the trainable tensors in parameter order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut ch = self.input_channels;
        for (i, c) in self.conv.iter().enumerate() {
            out.push((
                format!("conv{}.kernel", i + 1),
                vec![c.filters, c.width, ch],
            ));
            out.push((format!("conv{}.bias", i + 1), vec![c.filters]));
            ch = c.filters;
        }
        out.push(("dense1.weight".into(), vec![ch, self.dense_units]));
        out.push(("dense1.bias".into(), vec![self.dense_units]));
        out.push(("dense2.weight".into(), vec![self.dense_units, 2]));
        out.push(("dense2.bias".into(), vec![2]));
        out
    }

    /// Trainable scalars: a mean and a spread parameter per weight.
    pub fn parameter_count(&self) -> usize {
        2 * self
            .param_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum::<usize>()
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv.is_empty() {
            return Err(Error::Config(
                "at least one convolution layer is required".into(),
            ));
        }
        if self.input_channels == 0 || self.dense_units == 0 {
            return Err(Error::Config(
                "channels and dense units must be positive".into(),
            ));
        }
        let mut len = self.input_len;
        for c in &self.conv {
            if c.width == 0 || c.filters == 0 || c.width > len {
                return Err(Error::Config(format!(
                    "convolution {}x{} does not fit sequence length {len}",
                    c.filters, c.width
                )));
            }
            len = len + 1 - c.width;
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.mc_train_samples == 0 {
            return Err(Error::Config("mc_train_samples must be positive".into()));
        }
        if !(self.init_spread > 0.0) || !(self.prior.scale > 0.0) {
            return Err(Error::Config(
                "init_spread and prior scale must be positive".into(),
            ));
        }
        if !(self.adam.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if let KlWeight::Constant(w) = self.kl_weight {
            if !(w >= 0.0) {
                return Err(Error::Config(format!("kl weight must be >= 0, got {w}")));
            }
        }
        if self.strict {
            let shapes = self.layer_shapes();
            let reference: Vec<Vec<usize>> = REFERENCE_SHAPES.iter().map(|s| s.to_vec()).collect();
            if shapes != reference || self.input_len != 371 || self.input_channels != 4 {
                return Err(Error::Architecture(format!(
                    "input ({}, {}) with layer shapes {shapes:?} differs from the reference {reference:?}",
                    self.input_len, self.input_channels
                )));
            }
            if self.parameter_count() != REFERENCE_PARAMS {
                return Err(Error::Architecture(format!(
                    "{} trainable parameters, reference has {REFERENCE_PARAMS}",
                    self.parameter_count()
                )));
            }
        }
        Ok(())
    }
}
