//! Flat `key = value` run configuration.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use soh_fusion::bcnn::{BcnnConfig, KlWeight};
use soh_fusion::dataset::{Channel, SyntheticConfig};
use soh_fusion::ensemble::MixtureMode;

use crate::error::CliError;

/// Forecasting strategy used by `forecast`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Single model trained on every battery except the test one.
    Baseline,
    /// Mixture with weights minimizing point-forecast squared error.
    StackPoint,
    /// Mixture with weights maximizing the log score.
    StackDist,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [
        Strategy::Baseline,
        Strategy::StackPoint,
        Strategy::StackDist,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Baseline => "baseline",
            Strategy::StackPoint => "stack-point",
            Strategy::StackDist => "stack-dist",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Strategy::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                format!("unknown method `{s}` (expected baseline, stack-point or stack-dist)")
            })
    }
}

/// Everything a run depends on. Every key has a default.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// `synthetic` or a path to a long-format cycle CSV.
    pub dataset: String,
    pub synthetic_batteries: usize,
    pub synthetic_cycles: usize,
    pub synthetic_samples: usize,
    pub synthetic_seed: u64,
    pub max_capacity_ah: f64,
    /// `None` pads to the longest cycle.
    pub pad_length: Option<usize>,
    pub channels: Vec<Channel>,
    pub bcnn: BcnnConfig,
    pub method: Strategy,
    pub mixture_mode: MixtureMode,
    pub lambda_reg: f64,
    pub noise_sigma: f64,
    pub sweep_sigmas: Vec<f64>,
    pub interval_level: f64,
    /// Empty means every battery.
    pub test_batteries: Vec<String>,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let synthetic = SyntheticConfig::default();
        RunConfig {
            dataset: "synthetic".into(),
            synthetic_batteries: synthetic.batteries,
            synthetic_cycles: synthetic.cycles,
            synthetic_samples: synthetic.samples_at_initial,
            synthetic_seed: 7,
            max_capacity_ah: 2.5,
            pad_length: None,
            channels: Channel::DEFAULT.to_vec(),
            bcnn: BcnnConfig::default(),
            method: Strategy::StackDist,
            mixture_mode: MixtureMode::MomentMatched,
            lambda_reg: 0.01,
            noise_sigma: 0.1,
            sweep_sigmas: vec![0.0, 0.05, 0.1, 0.2],
            interval_level: 0.95,
            test_batteries: Vec::new(),
            seed: 42,
            out: PathBuf::from("sohfuse-out"),
        }
    }
}

fn list<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn parse_list<T: FromStr>(value: &str) -> Result<Vec<T>, String>
where
    T::Err: fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| format!("`{s}`: {e}")))
        .collect()
}

fn num<T: FromStr>(value: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    value.parse::<T>().map_err(|e| format!("`{value}`: {e}"))
}

/// Key order and one-line descriptions, used for the file format.
const KEYS: &[(&str, &str)] = &[
    ("dataset", "`synthetic` or path to a long-format cycle CSV"),
    ("synthetic_batteries", "synthetic fixture: number of cells"),
    ("synthetic_cycles", "synthetic fixture: cycles per cell"),
    (
        "synthetic_samples",
        "synthetic fixture: samples in a fresh-cell discharge",
    ),
    ("synthetic_seed", "synthetic fixture: generator seed"),
    (
        "max_capacity_ah",
        "capacities above this are rejected as corrupt",
    ),
    ("pad_length", "`auto` pads to the longest cycle"),
    (
        "channels",
        "input channels: voltage, temperature, time, current",
    ),
    ("epochs", ""),
    ("batch_size", ""),
    ("learning_rate", ""),
    ("adam_beta1", ""),
    ("adam_beta2", ""),
    ("adam_epsilon", ""),
    ("conv1_filters", ""),
    ("conv1_width", ""),
    ("conv2_filters", ""),
    ("conv2_width", ""),
    ("dense_units", ""),
    ("dense_relu", ""),
    ("prior_scale", "Laplace prior scale"),
    (
        "init_spread",
        "initial posterior spread relative to the prior scale",
    ),
    ("mc_train_samples", "weight draws per training step"),
    ("mc_predict_samples", "weight draws per forecast"),
    ("kl_weight", "`auto` is 1 / training pairs"),
    ("standardize_targets", ""),
    (
        "strict",
        "reject architectures other than the reference one",
    ),
    (
        "method",
        "forecast strategy: baseline, stack-point, stack-dist",
    ),
    ("mixture_mode", "moment-matched or per-draw"),
    ("lambda_reg", "L2 penalty on stacking weights"),
    ("noise_sigma", "input noise added at forecast time"),
    ("sweep_sigmas", "noise levels for noise-sweep"),
    (
        "interval_level",
        "central credible interval written to forecast files",
    ),
    ("test_batteries", "held-out batteries; empty means all"),
    ("seed", ""),
    ("out", "run directory"),
];

impl RunConfig {
    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        self.set_raw(key, value.trim())
            .map_err(|e| CliError::config(format!("{key}: {e}")))
    }

    fn set_raw(&mut self, key: &str, value: &str) -> Result<(), String> {
        let b = &mut self.bcnn;
        match key {
            "dataset" => self.dataset = value.to_string(),
            "synthetic_batteries" => self.synthetic_batteries = num(value)?,
            "synthetic_cycles" => self.synthetic_cycles = num(value)?,
            "synthetic_samples" => self.synthetic_samples = num(value)?,
            "synthetic_seed" => self.synthetic_seed = num(value)?,
            "max_capacity_ah" => self.max_capacity_ah = num(value)?,
            "pad_length" => {
                self.pad_length = if value == "auto" {
                    None
                } else {
                    Some(num(value)?)
                }
            }
            "channels" => self.channels = parse_list(value)?,
            "epochs" => b.epochs = num(value)?,
            "batch_size" => b.batch_size = num(value)?,
            "learning_rate" => b.adam.learning_rate = num(value)?,
            "adam_beta1" => b.adam.beta1 = num(value)?,
            "adam_beta2" => b.adam.beta2 = num(value)?,
            "adam_epsilon" => b.adam.epsilon = num(value)?,
            "conv1_filters" => conv(b, 0)?.filters = num(value)?,
            "conv1_width" => conv(b, 0)?.width = num(value)?,
            "conv2_filters" => conv(b, 1)?.filters = num(value)?,
            "conv2_width" => conv(b, 1)?.width = num(value)?,
            "dense_units" => b.dense_units = num(value)?,
            "dense_relu" => b.dense_relu = num(value)?,
            "prior_scale" => b.prior.scale = num(value)?,
            "init_spread" => b.init_spread = num(value)?,
            "mc_train_samples" => b.mc_train_samples = num(value)?,
            "mc_predict_samples" => b.mc_predict_samples = num(value)?,
            "kl_weight" => {
                b.kl_weight = if value == "auto" {
                    KlWeight::InverseTrainingPairs
                } else {
                    KlWeight::Constant(num(value)?)
                }
            }
            "standardize_targets" => b.standardize_targets = num(value)?,
            "strict" => b.strict = num(value)?,
            "method" => self.method = value.parse()?,
            "mixture_mode" => {
                self.mixture_mode = match value {
                    "moment-matched" => MixtureMode::MomentMatched,
                    "per-draw" => MixtureMode::PerDraw,
                    other => return Err(format!("unknown mixture mode `{other}`")),
                }
            }
            "lambda_reg" => self.lambda_reg = num(value)?,
            "noise_sigma" => self.noise_sigma = num(value)?,
            "sweep_sigmas" => self.sweep_sigmas = parse_list(value)?,
            "interval_level" => self.interval_level = num(value)?,
            "test_batteries" => self.test_batteries = parse_list(value)?,
            "seed" => self.seed = num(value)?,
            "out" => self.out = PathBuf::from(value),
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let b = &self.bcnn;
        let v = match key {
            "dataset" => self.dataset.clone(),
            "synthetic_batteries" => self.synthetic_batteries.to_string(),
            "synthetic_cycles" => self.synthetic_cycles.to_string(),
            "synthetic_samples" => self.synthetic_samples.to_string(),
            "synthetic_seed" => self.synthetic_seed.to_string(),
            "max_capacity_ah" => self.max_capacity_ah.to_string(),
            "pad_length" => self.pad_length.map_or("auto".into(), |p| p.to_string()),
            "channels" => list(&self.channels),
            "epochs" => b.epochs.to_string(),
            "batch_size" => b.batch_size.to_string(),
            "learning_rate" => b.adam.learning_rate.to_string(),
            "adam_beta1" => b.adam.beta1.to_string(),
            "adam_beta2" => b.adam.beta2.to_string(),
            "adam_epsilon" => b.adam.epsilon.to_string(),
            "conv1_filters" => b.conv.first()?.filters.to_string(),
            "conv1_width" => b.conv.first()?.width.to_string(),
            "conv2_filters" => b.conv.get(1)?.filters.to_string(),
            "conv2_width" => b.conv.get(1)?.width.to_string(),
            "dense_units" => b.dense_units.to_string(),
            "dense_relu" => b.dense_relu.to_string(),
            "prior_scale" => b.prior.scale.to_string(),
            "init_spread" => b.init_spread.to_string(),
            "mc_train_samples" => b.mc_train_samples.to_string(),
            "mc_predict_samples" => b.mc_predict_samples.to_string(),
            "kl_weight" => match b.kl_weight {
                KlWeight::InverseTrainingPairs => "auto".into(),
                KlWeight::Constant(w) => w.to_string(),
            },
            "standardize_targets" => b.standardize_targets.to_string(),
            "strict" => b.strict.to_string(),
            "method" => self.method.to_string(),
            "mixture_mode" => match self.mixture_mode {
                MixtureMode::MomentMatched => "moment-matched".into(),
                MixtureMode::PerDraw => "per-draw".into(),
            },
            "lambda_reg" => self.lambda_reg.to_string(),
            "noise_sigma" => self.noise_sigma.to_string(),
            "sweep_sigmas" => list(&self.sweep_sigmas),
            "interval_level" => self.interval_level.to_string(),
            "test_batteries" => list(&self.test_batteries),
            "seed" => self.seed.to_string(),
            "out" => self.out.display().to_string(),
            _ => return None,
        };
        Some(v)
    }

    /// `(key, value)` for every key, in file order.
    pub fn entries(&self) -> Vec<(String, String)> {
        KEYS.iter()
            .map(|(k, _)| (k.to_string(), self.get(k).unwrap_or_default()))
            .collect()
    }

    /// Parses the text format on top of the defaults.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::config(format!("line {}: expected key = value", n + 1)))?;
            self.set(key.trim(), value)
                .map_err(|e| CliError::config(format!("line {}: {}", n + 1, e.message)))?;
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), CliError> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| CliError::config(format!("--set `{assignment}`: expected key=value")))?;
        self.set(key.trim(), value)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// The text format, one commented line per key.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (key, doc) in KEYS {
            if !doc.is_empty() {
                out.push_str(&format!("# {doc}\n"));
            }
            out.push_str(&format!("{key} = {}\n", self.get(key).unwrap_or_default()));
        }
        out
    }

    pub fn synthetic(&self) -> SyntheticConfig {
        SyntheticConfig {
            batteries: self.synthetic_batteries,
            cycles: self.synthetic_cycles,
            samples_at_initial: self.synthetic_samples,
            ..SyntheticConfig::default()
        }
    }

    /// Checks value ranges that parsing alone cannot.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::config(m));
        if self.channels.is_empty() {
            return bad("channels: at least one channel is required".into());
        }
        if !(self.lambda_reg >= 0.0 && self.lambda_reg.is_finite()) {
            return bad(format!("lambda_reg must be >= 0, got {}", self.lambda_reg));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!(
                "noise_sigma must be >= 0, got {}",
                self.noise_sigma
            ));
        }
        if let Some(s) = self
            .sweep_sigmas
            .iter()
            .find(|s| !(**s >= 0.0 && s.is_finite()))
        {
            return bad(format!("sweep_sigmas must be >= 0, got {s}"));
        }
        if !(self.interval_level > 0.0 && self.interval_level < 1.0) {
            return bad(format!(
                "interval_level must be in (0, 1), got {}",
                self.interval_level
            ));
        }
        if self.bcnn.mc_predict_samples < 2 {
            return bad("mc_predict_samples must be >= 2".into());
        }
        if self.bcnn.conv.len() != 2 {
            return bad("exactly two convolution layers are configurable".into());
        }
        Ok(())
    }
}

fn conv(b: &mut BcnnConfig, i: usize) -> Result<&mut soh_fusion::bcnn::ConvSpec, String> {
    b.conv
        .get_mut(i)
        .ok_or_else(|| format!("no convolution layer {}", i + 1))
}
