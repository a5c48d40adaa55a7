mod evaluate;
mod forecast;
mod report;
mod sweep;
mod train;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use soh_fusion::bcnn::BcnnModel;
use soh_fusion::dataset::{
    generate_cycles, load_cycles, BatteryDataset, CsvSchema, DischargeCycle,
};
use soh_fusion::ensemble::{
    compose, stack_predict, FitConfig, MixtureMode, ModelPool, NestedPools, PoolMember,
    PredictionMatrix, StackingWeights, WeightMethod,
};
use soh_fusion::metrics::{Forecast, ForecastSeries};

use crate::config::{RunConfig, Strategy};
use crate::error::{io_err, CliError, Stage};
use crate::manifest::{sha256_hex, CommandRecord, RunManifest, StageTiming};

pub use evaluate::evaluate;
pub use forecast::forecast;
pub use report::report;
pub use sweep::noise_sweep;
pub use train::train;

pub const POOL_INDEX: &str = "pool/index.json";

/// Loaded configuration, dataset and the bookkeeping of one command.
pub struct Context {
    pub cfg: RunConfig,
    pub dataset: BatteryDataset,
    pub fingerprint: String,
    pub out: PathBuf,
    timings: Vec<StageTiming>,
    artifacts: Vec<PathBuf>,
}

impl Context {
    pub fn open(cfg: RunConfig) -> Result<Self, CliError> {
        cfg.validate()?;
        let start = Instant::now();
        let (cycles, fingerprint) = load_dataset(&cfg)?;
        let dataset = BatteryDataset::new(cycles, cfg.pad_length, &cfg.channels)
            .map_err(CliError::at(Stage::Data))?;
        let out = cfg.out.clone();
        std::fs::create_dir_all(&out).map_err(io_err(&out))?;
        let mut ctx = Context {
            cfg,
            dataset,
            fingerprint,
            out,
            timings: Vec::new(),
            artifacts: Vec::new(),
        };
        ctx.timed("load", start);
        Ok(ctx)
    }

    pub fn timed(&mut self, stage: &str, since: Instant) {
        self.timings.push(StageTiming {
            stage: stage.to_string(),
            seconds: since.elapsed().as_secs_f64(),
        });
    }

    /// Path under the run directory, creating parent directories.
    pub fn path(&self, rel: &str) -> Result<PathBuf, CliError> {
        let p = self.out.join(rel);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        Ok(p)
    }

    pub fn wrote(&mut self, path: PathBuf) {
        self.artifacts.push(path);
    }

    /// Records this command in the manifest and writes it atomically.
    pub fn finish(self, command: &str) -> Result<(), CliError> {
        let mut manifest = match RunManifest::load(&self.out)? {
            Some(m) if m.dataset_fingerprint == self.fingerprint => m,
            _ => RunManifest::new(self.fingerprint.clone()),
        };
        manifest.commands.insert(
            command.to_string(),
            CommandRecord {
                config: self.cfg.entries().into_iter().collect(),
                timings: self.timings,
            },
        );
        manifest.add_artifacts(&self.out, &self.artifacts);
        let snapshot = self.out.join("config.txt");
        std::fs::write(&snapshot, self.cfg.to_text()).map_err(io_err(&snapshot))?;
        manifest.add_artifacts(&self.out, &[snapshot]);
        manifest.save(&self.out)
    }

    /// Held-out batteries selected by the config, all by default.
    pub fn test_batteries(&self) -> Result<Vec<String>, CliError> {
        let ids = self.dataset.battery_ids();
        if self.cfg.test_batteries.is_empty() {
            return Ok(ids);
        }
        for b in &self.cfg.test_batteries {
            if !ids.contains(b) {
                return Err(CliError::config(format!(
                    "test battery `{b}` is not in the dataset (have {})",
                    ids.join(", ")
                )));
            }
        }
        Ok(self.cfg.test_batteries.clone())
    }

    /// Independent generator for a named step, stable across runs and
    /// independent of which other steps run.
    pub fn rng(&self, label: &str) -> ChaCha8Rng {
        let digest = sha256_hex(format!("{}/{label}", self.cfg.seed).as_bytes());
        let seed = u64::from_str_radix(&digest[..16], 16).expect("hex digest");
        ChaCha8Rng::seed_from_u64(seed)
    }
}

fn load_dataset(cfg: &RunConfig) -> Result<(Vec<DischargeCycle>, String), CliError> {
    if cfg.dataset == "synthetic" {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.synthetic_seed);
        let cycles =
            generate_cycles(&cfg.synthetic(), &mut rng).map_err(CliError::at(Stage::Config))?;
        let bytes =
            serde_json::to_vec(&cycles).map_err(|e| CliError::new(Stage::Data, e.to_string()))?;
        return Ok((cycles, sha256_hex(&bytes)));
    }
    let path = Path::new(&cfg.dataset);
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::new(Stage::Data, format!("{}: {e}", path.display())))?;
    let schema = CsvSchema {
        max_capacity_ah: cfg.max_capacity_ah,
        ..CsvSchema::default()
    };
    let cycles = load_cycles(path, &schema).map_err(CliError::at(Stage::Data))?;
    Ok((cycles, sha256_hex(&bytes)))
}

/// File-name-safe form of a battery id.
pub fn file_tag(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '+' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// On-disk layout of the nested pools.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolIndex {
    pub dataset_fingerprint: String,
    pub batteries: Vec<String>,
    /// Battery -> model trained on every other battery.
    pub outer: BTreeMap<String, String>,
    /// `"a+b"` -> model trained without batteries a and b.
    pub pairs: BTreeMap<String, String>,
}

impl PoolIndex {
    /// `(excluded tag, model file)` of the pool fused for `battery`, in pool order.
    pub fn inner_files(&self, battery: &str) -> Vec<(String, String)> {
        if self.batteries.len() <= 2 {
            return vec![(
                battery.to_string(),
                self.outer.get(battery).cloned().unwrap_or_default(),
            )];
        }
        self.batteries
            .iter()
            .filter(|j| *j != battery)
            .map(|j| {
                let key = if j.as_str() < battery {
                    format!("{j}+{battery}")
                } else {
                    format!("{battery}+{j}")
                };
                (j.clone(), self.pairs.get(&key).cloned().unwrap_or_default())
            })
            .collect()
    }

    fn load(out: &Path) -> Result<Self, CliError> {
        let path = out.join(POOL_INDEX);
        let text = std::fs::read_to_string(&path).map_err(|e| {
            CliError::new(
                Stage::Pool,
                format!(
                    "no trained pool at {} ({e}); run `sohfuse train` first",
                    path.display()
                ),
            )
        })?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::new(Stage::Pool, format!("{}: {e}", path.display())))
    }
}

fn load_model(out: &Path, rel: &str) -> Result<BcnnModel, CliError> {
    BcnnModel::load(out.join(rel)).map_err(|e| CliError::new(Stage::Pool, e.to_string()))
}

/// Reads the pools written by `train` and checks they match the dataset.
pub fn load_pools(ctx: &Context) -> Result<(NestedPools, PoolIndex), CliError> {
    let index = PoolIndex::load(&ctx.out)?;
    if index.dataset_fingerprint != ctx.fingerprint {
        return Err(CliError::new(
            Stage::Pool,
            "the pool was trained on a different dataset; rerun `sohfuse train`",
        ));
    }
    let ids = index.batteries.clone();
    let outer = ids
        .iter()
        .map(|b| {
            let rel = index.outer.get(b).ok_or_else(|| {
                CliError::new(
                    Stage::Pool,
                    format!("pool index has no model excluding {b}"),
                )
            })?;
            Ok(PoolMember {
                excluded: b.clone(),
                model: load_model(&ctx.out, rel)?,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let mut inner = BTreeMap::new();
    for b in &ids {
        let members = if ids.len() > 2 {
            ids.iter()
                .filter(|j| *j != b)
                .map(|j| {
                    let key = if j < b {
                        format!("{j}+{b}")
                    } else {
                        format!("{b}+{j}")
                    };
                    let rel = index.pairs.get(&key).ok_or_else(|| {
                        CliError::new(
                            Stage::Pool,
                            format!("pool index has no model excluding {key}"),
                        )
                    })?;
                    Ok(PoolMember {
                        excluded: j.clone(),
                        model: load_model(&ctx.out, rel)?,
                    })
                })
                .collect::<Result<Vec<_>, CliError>>()?
        } else {
            vec![outer
                .iter()
                .find(|m| &m.excluded == b)
                .cloned()
                .expect("outer member")]
        };
        inner.insert(
            b.clone(),
            ModelPool::new(members).map_err(CliError::at(Stage::Pool))?,
        );
    }
    let outer = ModelPool::new(outer).map_err(CliError::at(Stage::Pool))?;
    Ok((NestedPools { outer, inner }, index))
}

/// Stacking weights of both methods for one held-out battery, fitted on the
/// other batteries' pairs as predicted by the pool that never saw it.
pub struct FoldWeights {
    pub logscore: StackingWeights,
    pub point: StackingWeights,
    pub matrix: PredictionMatrix,
}

pub fn fit_fold(
    ctx: &Context,
    pools: &NestedPools,
    battery: &str,
) -> Result<FoldWeights, CliError> {
    let pool = pools.for_test(battery).map_err(CliError::at(Stage::Pool))?;
    let others: Vec<String> = ctx
        .dataset
        .battery_ids()
        .into_iter()
        .filter(|b| b != battery)
        .collect();
    let mut rng = ctx.rng(&format!("fit/{battery}"));
    let run = CliError::at(Stage::Run);
    let matrix =
        PredictionMatrix::from_pool(pool, &ctx.dataset, &others, ctx.cfg.noise_sigma, &mut rng)
            .map_err(&run)?;
    let fit = FitConfig::default();
    Ok(FoldWeights {
        logscore: matrix
            .fit(WeightMethod::LogScore, ctx.cfg.lambda_reg, &fit)
            .map_err(&run)?,
        point: matrix
            .fit(WeightMethod::PointMse, ctx.cfg.lambda_reg, &fit)
            .map_err(&run)?,
        matrix,
    })
}

/// Forecasts of one strategy for a list of cycles.
pub struct FoldForecasts {
    pub rows: Vec<(String, u32)>,
    pub observed: Vec<Option<f64>>,
    pub by_strategy: BTreeMap<&'static str, Vec<Forecast>>,
}

impl FoldForecasts {
    pub fn series(&self, strategy: Strategy) -> Result<ForecastSeries, CliError> {
        let observed: Option<Vec<f64>> = self.observed.iter().copied().collect();
        let observed =
            observed.ok_or_else(|| CliError::new(Stage::Run, "observations are incomplete"))?;
        ForecastSeries::from_parts(self.by_strategy[strategy.name()].clone(), &observed)
            .map_err(CliError::at(Stage::Run))
    }
}

/// Forecasts every cycle with each requested strategy. Stacked strategies
/// need `weights`. All strategies draw from the same generator state, so a
/// one-member pool reproduces the baseline exactly.
#[allow(clippy::too_many_arguments)]
pub fn forecast_cycles(
    ctx: &Context,
    pools: &NestedPools,
    battery: &str,
    weights: Option<&FoldWeights>,
    strategies: &[Strategy],
    cycles: &[&DischargeCycle],
    observed: Vec<Option<f64>>,
    sigma: f64,
) -> Result<FoldForecasts, CliError> {
    let run = CliError::at(Stage::Run);
    let label = format!("test/{battery}");
    let mut by_strategy = BTreeMap::new();
    if strategies.contains(&Strategy::Baseline) {
        let baseline = pools.baseline(battery).map_err(CliError::at(Stage::Pool))?;
        let single = ModelPool::new(vec![PoolMember {
            excluded: battery.to_string(),
            model: baseline.clone(),
        }])
        .map_err(&run)?;
        let base = single
            .predict(cycles, sigma, &mut ctx.rng(&label))
            .map_err(&run)?;
        by_strategy.insert(
            Strategy::Baseline.name(),
            base.into_iter()
                .next()
                .unwrap_or_default()
                .into_iter()
                .map(Forecast::from)
                .collect(),
        );
    }
    let stacked: Vec<Strategy> = strategies
        .iter()
        .copied()
        .filter(|s| *s != Strategy::Baseline)
        .collect();
    if !stacked.is_empty() {
        let w = weights
            .ok_or_else(|| CliError::new(Stage::Run, "stacked forecasts need fitted weights"))?;
        let pool = pools.for_test(battery).map_err(CliError::at(Stage::Pool))?;
        let mode = ctx.cfg.mixture_mode;
        let members = match mode {
            MixtureMode::MomentMatched => Some(
                pool.predict(cycles, sigma, &mut ctx.rng(&label))
                    .map_err(&run)?,
            ),
            MixtureMode::PerDraw => None,
        };
        for s in stacked {
            let weights = if s == Strategy::StackPoint {
                &w.point
            } else {
                &w.logscore
            };
            let m = match &members {
                Some(per_model) => compose(per_model, weights),
                None => stack_predict(pool, weights, cycles, sigma, mode, &mut ctx.rng(&label)),
            }
            .map_err(&run)?;
            by_strategy.insert(s.name(), m.into_iter().map(Forecast::from).collect());
        }
    }
    Ok(FoldForecasts {
        rows: cycles
            .iter()
            .map(|c| (c.battery_id.clone(), c.cycle_index))
            .collect(),
        observed,
        by_strategy,
    })
}

/// `battery_id,cycle_index,observed,mean,sd,lower,upper`; `cycle_index` is the
/// input cycle and `observed` the capacity of the cycle after it.
pub fn write_forecast_csv(
    path: &Path,
    f: &FoldForecasts,
    strategy: Strategy,
    level: f64,
) -> Result<(), CliError> {
    let run = CliError::at(Stage::Run);
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| CliError::new(Stage::Run, format!("{}: {e}", path.display())))?;
    let csv_err = |e: csv::Error| CliError::new(Stage::Run, format!("{}: {e}", path.display()));
    w.write_record([
        "battery_id",
        "cycle_index",
        "observed",
        "mean",
        "sd",
        "lower",
        "upper",
    ])
    .map_err(csv_err)?;
    for (i, fc) in f.by_strategy[strategy.name()].iter().enumerate() {
        let (lo, hi) = fc.interval(level).map_err(&run)?;
        w.write_record([
            f.rows[i].0.clone(),
            f.rows[i].1.to_string(),
            f.observed[i].map_or(String::new(), |y| y.to_string()),
            fc.mean().to_string(),
            fc.variance().sqrt().to_string(),
            lo.to_string(),
            hi.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

/// Keeps the first of each repeated value; returns the repeats.
pub fn dedup_sigmas(sigmas: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut kept: Vec<f64> = Vec::new();
    let mut dropped = Vec::new();
    for &s in sigmas {
        if kept.contains(&s) {
            dropped.push(s);
        } else {
            kept.push(s);
        }
    }
    (kept, dropped)
}
