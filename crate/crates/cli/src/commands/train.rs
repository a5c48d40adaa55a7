use std::collections::BTreeMap;
use std::time::Instant;

use soh_fusion::bcnn::BcnnModel;
use soh_fusion::ensemble::build_nested_pools;

use super::{file_tag, Context, PoolIndex, POOL_INDEX};
use crate::error::{io_err, CliError, Stage};

/// Trains the leave-one-out pool and the pools of every battery pair, then
/// writes one model file per distinct model.
pub fn train(mut ctx: Context) -> Result<String, CliError> {
    let ids = ctx.dataset.battery_ids();
    let start = Instant::now();
    let mut rng = ctx.rng("train");
    let pools = build_nested_pools(&ctx.dataset, &ctx.cfg.bcnn, &mut rng).map_err(|e| match e {
        soh_fusion::Error::InsufficientData(_) | soh_fusion::Error::DegenerateChannel { .. } => {
            CliError::new(Stage::Data, e.to_string())
        }
        soh_fusion::Error::Config(_) | soh_fusion::Error::Architecture(_) => {
            CliError::config(e.to_string())
        }
        _ => CliError::new(Stage::Training, e.to_string()),
    })?;
    ctx.timed("train", start);

    let start = Instant::now();
    let mut index = PoolIndex {
        dataset_fingerprint: ctx.fingerprint.clone(),
        batteries: ids.clone(),
        outer: BTreeMap::new(),
        pairs: BTreeMap::new(),
    };
    let mut summary = csv::Writer::from_writer(Vec::new());
    let row_err = |e: csv::Error| CliError::new(Stage::Run, e.to_string());
    summary
        .write_record([
            "model",
            "excluded",
            "training_pairs",
            "epochs",
            "final_loss",
            "final_nll",
            "final_kl",
        ])
        .map_err(row_err)?;
    let mut save = |ctx: &mut Context,
                    rel: String,
                    tag: &str,
                    excluded: &[&String],
                    model: &BcnnModel|
     -> Result<String, CliError> {
        let path = ctx.path(&rel)?;
        model.save(&path).map_err(CliError::at(Stage::Run))?;
        ctx.wrote(path);
        if let Some(norm) = &model.normalization {
            let npath = ctx.path(&format!("pool/normalization/{}.json", file_tag(tag)))?;
            norm.save(&npath).map_err(CliError::at(Stage::Run))?;
            ctx.wrote(npath);
        }
        let last = model.history.last();
        let pairs: usize = ctx
            .dataset
            .battery_ids()
            .iter()
            .filter(|b| !excluded.contains(b))
            .map(|b| {
                ctx.dataset
                    .cycles(b)
                    .map_or(0, |c| c.len().saturating_sub(1))
            })
            .sum();
        summary
            .write_record([
                rel.clone(),
                tag.to_string(),
                pairs.to_string(),
                model.history.len().to_string(),
                last.map_or(String::new(), |r| r.loss.to_string()),
                last.map_or(String::new(), |r| r.nll.to_string()),
                last.map_or(String::new(), |r| r.kl.to_string()),
            ])
            .map_err(row_err)?;
        Ok(rel)
    };
    for m in pools.outer.members() {
        let rel = format!("pool/models/{}.json", file_tag(&m.excluded));
        let rel = save(&mut ctx, rel, &m.excluded, &[&m.excluded], &m.model)?;
        index.outer.insert(m.excluded.clone(), rel);
    }
    if ids.len() > 2 {
        for (i, a) in ids.iter().enumerate() {
            for b in &ids[i + 1..] {
                let key = format!("{a}+{b}");
                let model = pools
                    .inner
                    .get(a)
                    .and_then(|p| p.get(b))
                    .expect("pair model present in the inner pool");
                let rel = format!("pool/inner/{}.json", file_tag(&key));
                let rel = save(&mut ctx, rel, &key, &[a, b], model)?;
                index.pairs.insert(key, rel);
            }
        }
    }
    let index_path = ctx.path(POOL_INDEX)?;
    let text = serde_json::to_string_pretty(&index)
        .map_err(|e| CliError::new(Stage::Run, e.to_string()))?;
    std::fs::write(&index_path, text).map_err(io_err(&index_path))?;
    ctx.wrote(index_path);
    let summary_path = ctx.path("train/summary.csv")?;
    let bytes = summary
        .into_inner()
        .map_err(|e| CliError::new(Stage::Run, e.to_string()))?;
    std::fs::write(&summary_path, &bytes).map_err(io_err(&summary_path))?;
    ctx.wrote(summary_path);
    ctx.timed("write", start);

    let n_models = index.outer.len() + index.pairs.len();
    let msg = format!(
        "trained {n_models} models ({} leave-one-out, {} leave-two-out) on {} batteries\nrun directory: {}\n",
        index.outer.len(),
        index.pairs.len(),
        ids.len(),
        ctx.out.display()
    );
    ctx.finish("train")?;
    Ok(msg)
}
