use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bcnn::{init_model, BcnnConfig, BcnnModel, GaussianPrediction};
use crate::dataset::{BatteryDataset, DischargeCycle};
use crate::error::{Error, Result};

/// A trained model tagged with the battery its training set excluded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolMember {
    pub excluded: String,
    pub model: BcnnModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelPool {
    members: Vec<PoolMember>,
}

impl ModelPool {
    pub fn new(members: Vec<PoolMember>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Contract(
                "a model pool needs at least one member".into(),
            ));
        }
        let mut seen = BTreeSet::new();
        for m in &members {
            if !seen.insert(m.excluded.as_str()) {
                return Err(Error::Contract(format!(
                    "duplicate provenance tag `{}`",
                    m.excluded
                )));
            }
        }
        Ok(ModelPool { members })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> &[PoolMember] {
        &self.members
    }

    pub fn tags(&self) -> Vec<String> {
        self.members.iter().map(|m| m.excluded.clone()).collect()
    }

    pub fn get(&self, tag: &str) -> Option<&BcnnModel> {
        self.members
            .iter()
            .find(|m| m.excluded == tag)
            .map(|m| &m.model)
    }

    /// Moment-matched predictions of every member for every cycle,
    /// `result[member][cycle]`. Members run in parallel on seeds drawn from
    /// `rng` in member order, so the result does not depend on scheduling.
    pub fn predict<R: Rng + ?Sized>(
        &self,
        cycles: &[&DischargeCycle],
        input_noise: f64,
        rng: &mut R,
    ) -> Result<Vec<Vec<GaussianPrediction>>> {
        let seeds: Vec<u64> = self.members.iter().map(|_| rng.random()).collect();
        self.members
            .par_iter()
            .zip(seeds)
            .map(|(m, seed)| {
                let feats = cycles
                    .iter()
                    .map(|c| m.model.features(c))
                    .collect::<Result<Vec<_>>>()?;
                let refs: Vec<_> = feats.iter().collect();
                m.model
                    .predict_batch(&refs, input_noise, &mut ChaCha8Rng::seed_from_u64(seed))
            })
            .collect()
    }
}

/// Trains one model on every battery of `dataset` except `exclude`, with its
/// own normalization fitted on that training set.
pub fn train_member(
    dataset: &BatteryDataset,
    exclude: &[String],
    config: &BcnnConfig,
    seed: u64,
) -> Result<BcnnModel> {
    let keep: Vec<String> = dataset
        .battery_ids()
        .into_iter()
        .filter(|id| !exclude.contains(id))
        .collect();
    if keep.is_empty() {
        return Err(Error::InsufficientData(format!(
            "excluding {exclude:?} leaves no training battery"
        )));
    }
    let train = dataset.subset(&keep)?;
    let norm = train.fit_normalization()?;
    let pairs = train.build_all_pairs(&norm)?;
    let config = BcnnConfig {
        input_len: dataset.pad_length,
        input_channels: dataset.channels.len(),
        seed,
        ..config.clone()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = init_model(&config, &mut rng)?;
    model.normalization = Some(norm);
    model.train(&pairs, &mut rng)?;
    Ok(model)
}

fn train_jobs(
    dataset: &BatteryDataset,
    config: &BcnnConfig,
    jobs: &[(String, Vec<String>, u64)],
) -> Result<Vec<BcnnModel>> {
    jobs.par_iter()
        .map(|(tag, exclude, seed)| {
            train_member(dataset, exclude, config, *seed).map_err(|e| Error::PoolMember {
                battery_id: tag.clone(),
                source: Box::new(e),
            })
        })
        .collect()
}

/// Leave-one-battery-out pool: one model per battery, trained on all others.
/// Training runs in parallel on the ambient rayon pool.
pub fn build_pool<R: Rng + ?Sized>(
    dataset: &BatteryDataset,
    config: &BcnnConfig,
    rng: &mut R,
) -> Result<ModelPool> {
    let ids = dataset.battery_ids();
    if ids.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "a leave-one-out pool needs at least 2 batteries, got {}",
            ids.len()
        )));
    }
    let jobs: Vec<(String, Vec<String>, u64)> = ids
        .iter()
        .map(|b| (b.clone(), vec![b.clone()], rng.random()))
        .collect();
    let models = train_jobs(dataset, config, &jobs)?;
    ModelPool::new(
        ids.into_iter()
            .zip(models)
            .map(|(excluded, model)| PoolMember { excluded, model })
            .collect(),
    )
}

/// Outer leave-one-out pool plus, for every battery `b`, the pool that never
/// saw `b`: the leave-one-out pool of the dataset without `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct NestedPools {
    pub outer: ModelPool,
    pub inner: BTreeMap<String, ModelPool>,
}

impl NestedPools {
    /// Pool fused when forecasting `battery`.
    pub fn for_test(&self, battery: &str) -> Result<&ModelPool> {
        self.inner
            .get(battery)
            .ok_or_else(|| Error::Contract(format!("no pool for test battery `{battery}`")))
    }

    /// Single model trained on every battery except `battery`.
    pub fn baseline(&self, battery: &str) -> Result<&BcnnModel> {
        self.outer
            .get(battery)
            .ok_or_else(|| Error::Contract(format!("no baseline for test battery `{battery}`")))
    }
}

/// Trains the outer pool and every inner pool. A model excluding `{a, b}`
/// serves both inner pools of `a` and `b`, so `K + K(K-1)/2` models are
/// trained. With two batteries the inner pool of `b` is the outer model
/// excluding `b`.
pub fn build_nested_pools<R: Rng + ?Sized>(
    dataset: &BatteryDataset,
    config: &BcnnConfig,
    rng: &mut R,
) -> Result<NestedPools> {
    let ids = dataset.battery_ids();
    if ids.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "nested pools need at least 2 batteries, got {}",
            ids.len()
        )));
    }
    let mut jobs: Vec<(String, Vec<String>, u64)> = ids
        .iter()
        .map(|b| (b.clone(), vec![b.clone()], rng.random()))
        .collect();
    let mut pair_slot = BTreeMap::new();
    if ids.len() > 2 {
        for (i, a) in ids.iter().enumerate() {
            for b in &ids[i + 1..] {
                pair_slot.insert((a.clone(), b.clone()), jobs.len());
                jobs.push((format!("{a}+{b}"), vec![a.clone(), b.clone()], rng.random()));
            }
        }
    }
    let models = train_jobs(dataset, config, &jobs)?;
    let outer = ModelPool::new(
        ids.iter()
            .zip(&models)
            .map(|(b, m)| PoolMember {
                excluded: b.clone(),
                model: m.clone(),
            })
            .collect(),
    )?;
    let mut inner = BTreeMap::new();
    for (i, b) in ids.iter().enumerate() {
        let members = if ids.len() > 2 {
            ids.iter()
                .filter(|j| *j != b)
                .map(|j| {
                    let key = if j < b {
                        (j.clone(), b.clone())
                    } else {
                        (b.clone(), j.clone())
                    };
                    PoolMember {
                        excluded: j.clone(),
                        model: models[pair_slot[&key]].clone(),
                    }
                })
                .collect()
        } else {
            vec![PoolMember {
                excluded: b.clone(),
                model: models[i].clone(),
            }]
        };
        inner.insert(b.clone(), ModelPool::new(members)?);
    }
    Ok(NestedPools { outer, inner })
}
