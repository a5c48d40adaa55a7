use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Channel, DischargeCycle};
use crate::error::{Error, Result};
use crate::numeric::Tensor;

/// Extends every sample array to `pad_length` by repeating its last value.
pub fn pad_cycle(cycle: &DischargeCycle, pad_length: usize) -> Result<DischargeCycle> {
    let len = cycle.len();
    if len > pad_length {
        return Err(Error::Length { len, pad_length });
    }
    let pad = |v: &[f64]| {
        let mut out = v.to_vec();
        out.resize(
            pad_length,
            *v.last().expect("validated cycles are non-empty"),
        );
        out
    };
    Ok(DischargeCycle {
        battery_id: cycle.battery_id.clone(),
        cycle_index: cycle.cycle_index,
        time_s: pad(&cycle.time_s),
        voltage_v: pad(&cycle.voltage_v),
        temperature_c: pad(&cycle.temperature_c),
        current_a: cycle.current_a.as_deref().map(pad),
        capacity_ah: cycle.capacity_ah,
    })
}

/// Per-channel min-max scaling fitted on training cycles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub channels: Vec<Channel>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormalizationParams {
    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    /// Scales a cycle to `[len, C]` features; values outside the fitted
    /// range are kept (no clamping).
    pub fn apply(&self, cycle: &DischargeCycle) -> Result<Tensor> {
        let c = self.channels.len();
        let n = cycle.len();
        let mut values = vec![0.0; n * c];
        for (j, &ch) in self.channels.iter().enumerate() {
            let src = cycle.channel(ch)?;
            let (lo, span) = (self.min[j], self.max[j] - self.min[j]);
            for (t, &v) in src.iter().enumerate() {
                values[t * c + j] = (v - lo) / span;
            }
        }
        Tensor::new(vec![n, c], values)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn fit_normalization<'a>(
    train: impl IntoIterator<Item = &'a DischargeCycle>,
    channels: &[Channel],
) -> Result<NormalizationParams> {
    let mut min = vec![f64::INFINITY; channels.len()];
    let mut max = vec![f64::NEG_INFINITY; channels.len()];
    let mut seen = false;
    for cycle in train {
        seen = true;
        for (j, &ch) in channels.iter().enumerate() {
            for &v in cycle.channel(ch)? {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
    }
    if !seen {
        return Err(Error::InsufficientData(
            "normalization needs at least one training cycle".into(),
        ));
    }
    for (j, &ch) in channels.iter().enumerate() {
        if max[j] <= min[j] {
            return Err(Error::DegenerateChannel {
                channel: ch.to_string(),
                value: min[j],
            });
        }
    }
    Ok(NormalizationParams {
        channels: channels.to_vec(),
        min,
        max,
    })
}

pub fn apply_normalization(cycle: &DischargeCycle, params: &NormalizationParams) -> Result<Tensor> {
    params.apply(cycle)
}

/// Supervised one-step-ahead pair: features of cycle `t`, capacity of `t + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleTensor {
    pub battery_id: String,
    /// Index of the cycle the features come from.
    pub cycle_index: u32,
    pub features: Tensor,
    pub label: f64,
}

/// Discharge cycles grouped per battery, ordered by cycle index.
#[derive(Debug, Clone, PartialEq)]
pub struct BatteryDataset {
    batteries: BTreeMap<String, Vec<DischargeCycle>>,
    pub pad_length: usize,
    pub channels: Vec<Channel>,
}

impl BatteryDataset {
    /// Groups cycles by battery. `pad_length` defaults to the longest cycle.
    pub fn new(
        cycles: Vec<DischargeCycle>,
        pad_length: Option<usize>,
        channels: &[Channel],
    ) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::Config("at least one channel is required".into()));
        }
        let mut batteries: BTreeMap<String, Vec<DischargeCycle>> = BTreeMap::new();
        for c in cycles {
            batteries.entry(c.battery_id.clone()).or_default().push(c);
        }
        for (id, cycles) in &mut batteries {
            cycles.sort_by_key(|c| c.cycle_index);
            if let Some(w) = cycles
                .windows(2)
                .find(|w| w[0].cycle_index == w[1].cycle_index)
            {
                return Err(Error::Data {
                    battery_id: id.clone(),
                    cycle_index: w[0].cycle_index,
                    reason: "duplicate cycle index".into(),
                });
            }
        }
        let longest = batteries
            .values()
            .flatten()
            .map(|c| c.len())
            .max()
            .unwrap_or(0);
        let pad_length = pad_length.unwrap_or(longest);
        if longest > pad_length {
            return Err(Error::Length {
                len: longest,
                pad_length,
            });
        }
        Ok(BatteryDataset {
            batteries,
            pad_length,
            channels: channels.to_vec(),
        })
    }

    pub fn battery_ids(&self) -> Vec<String> {
        self.batteries.keys().cloned().collect()
    }

    pub fn battery_count(&self) -> usize {
        self.batteries.len()
    }

    pub fn cycles(&self, battery_id: &str) -> Result<&[DischargeCycle]> {
        self.batteries
            .get(battery_id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::InsufficientData(format!("unknown battery `{battery_id}`")))
    }

    pub fn all_cycles(&self) -> impl Iterator<Item = &DischargeCycle> {
        self.batteries.values().flatten()
    }

    /// Same cycles restricted to the listed batteries.
    pub fn subset(&self, ids: &[String]) -> Result<BatteryDataset> {
        let mut batteries = BTreeMap::new();
        for id in ids {
            batteries.insert(id.clone(), self.cycles(id)?.to_vec());
        }
        Ok(BatteryDataset {
            batteries,
            pad_length: self.pad_length,
            channels: self.channels.clone(),
        })
    }

    /// Min-max scaling fitted on every cycle of this dataset.
    pub fn fit_normalization(&self) -> Result<NormalizationParams> {
        fit_normalization(self.all_cycles(), &self.channels)
    }

    /// One-step-ahead pairs for a battery: `cycles - 1` items.
    pub fn build_pairs(
        &self,
        battery_id: &str,
        norm: &NormalizationParams,
    ) -> Result<Vec<CycleTensor>> {
        let cycles = self.cycles(battery_id)?;
        if cycles.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "battery `{battery_id}` has {} cycle(s); need at least 2",
                cycles.len()
            )));
        }
        cycles
            .windows(2)
            .map(|w| {
                let padded = pad_cycle(&w[0], self.pad_length)?;
                Ok(CycleTensor {
                    battery_id: battery_id.to_string(),
                    cycle_index: w[0].cycle_index,
                    features: norm.apply(&padded)?,
                    label: w[1].capacity_ah,
                })
            })
            .collect()
    }

    /// Un-normalized one-step-ahead pairs `(cycle t, capacity at t + 1)`, for
    /// models that apply their own normalization.
    pub fn raw_pairs(&self, battery_id: &str) -> Result<Vec<(&DischargeCycle, f64)>> {
        let cycles = self.cycles(battery_id)?;
        if cycles.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "battery `{battery_id}` has {} cycle(s); need at least 2",
                cycles.len()
            )));
        }
        Ok(cycles
            .windows(2)
            .map(|w| (&w[0], w[1].capacity_ah))
            .collect())
    }

    /// Pairs of every battery, in battery order.
    pub fn build_all_pairs(&self, norm: &NormalizationParams) -> Result<Vec<CycleTensor>> {
        let mut out = Vec::new();
        for id in self.batteries.keys() {
            out.extend(self.build_pairs(id, norm)?);
        }
        Ok(out)
    }
}

/// Adds i.i.d. `N(0, sigma^2)` noise to every feature value.
pub fn inject_noise<R: Rng + ?Sized>(features: &Tensor, sigma: f64, rng: &mut R) -> Result<Tensor> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::Domain(format!(
            "noise sigma must be >= 0, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(features.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Domain(e.to_string()))?;
    Ok(features.map(|v| v + normal.sample(rng)))
}
