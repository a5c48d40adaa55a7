use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bcnn::GaussianPrediction;
use crate::dataset::BatteryDataset;
use crate::ensemble::pool::ModelPool;
use crate::ensemble::weights::{
    fit_logscore_weights, fit_pointpred_weights, FitConfig, StackingWeights, WeightMethod,
};
use crate::error::{Error, Result};

/// Every pool member's predictive distribution at every observation of a
/// fitting set. Weight fitting only reads this matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrix {
    pub tags: Vec<String>,
    /// `(battery, cycle index)` of the features behind each observation.
    pub rows: Vec<(String, u32)>,
    pub targets: Vec<f64>,
    /// `preds[k][i]`.
    pub preds: Vec<Vec<GaussianPrediction>>,
}

impl PredictionMatrix {
    /// Predicts every one-step-ahead pair of `batteries` with every member.
    pub fn from_pool<R: Rng + ?Sized>(
        pool: &ModelPool,
        dataset: &BatteryDataset,
        batteries: &[String],
        input_noise: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut cycles = Vec::new();
        let mut rows = Vec::new();
        let mut targets = Vec::new();
        for b in batteries {
            for (cycle, label) in dataset.raw_pairs(b)? {
                rows.push((b.clone(), cycle.cycle_index));
                cycles.push(cycle);
                targets.push(label);
            }
        }
        if cycles.is_empty() {
            return Err(Error::InsufficientData("empty fitting set".into()));
        }
        Ok(PredictionMatrix {
            tags: pool.tags(),
            preds: pool.predict(&cycles, input_noise, rng)?,
            rows,
            targets,
        })
    }

    /// `[i][k]` log predictive density at the observed target.
    pub fn log_densities(&self) -> Vec<Vec<f64>> {
        (0..self.targets.len())
            .map(|i| {
                self.preds
                    .iter()
                    .map(|p| p[i].spec().log_prob(self.targets[i]))
                    .collect()
            })
            .collect()
    }

    /// `[i][k]` predictive means.
    pub fn means(&self) -> Vec<Vec<f64>> {
        (0..self.targets.len())
            .map(|i| self.preds.iter().map(|p| p[i].mu).collect())
            .collect()
    }

    pub fn fit(
        &self,
        method: WeightMethod,
        lambda_reg: f64,
        cfg: &FitConfig,
    ) -> Result<StackingWeights> {
        match method {
            WeightMethod::LogScore => fit_logscore_weights(&self.log_densities(), lambda_reg, cfg),
            WeightMethod::PointMse => {
                fit_pointpred_weights(&self.means(), &self.targets, lambda_reg, cfg)
            }
        }
    }

    /// Long-format audit file: one row per observation and member.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Contract(format!("{other:?}")),
        })?;
        w.write_record([
            "battery_id",
            "cycle_index",
            "target",
            "model",
            "mu",
            "sigma",
            "log_density",
        ])?;
        let log_dens = self.log_densities();
        for (i, (battery, cycle)) in self.rows.iter().enumerate() {
            for (k, tag) in self.tags.iter().enumerate() {
                let p = &self.preds[k][i];
                w.write_record([
                    battery.clone(),
                    cycle.to_string(),
                    self.targets[i].to_string(),
                    tag.clone(),
                    p.mu.to_string(),
                    p.sigma.to_string(),
                    log_dens[i][k].to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptorMember {
    /// Battery the member's training set excluded.
    pub excluded: String,
    pub model_file: String,
}

/// On-disk description of one fitted ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleDescriptor {
    pub test_battery: String,
    pub members: Vec<DescriptorMember>,
    pub weights: StackingWeights,
    /// Which observations and protocol the weights were fitted on.
    pub fitting_set: String,
}

impl EnsembleDescriptor {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let d: EnsembleDescriptor = serde_json::from_str(&text)?;
        d.weights.validate()?;
        if d.members.len() != d.weights.len() {
            return Err(Error::Contract(format!(
                "{}: {} members for {} weights",
                path.display(),
                d.members.len(),
                d.weights.len()
            )));
        }
        Ok(d)
    }
}
