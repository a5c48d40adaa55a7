use std::path::Path;
use std::time::Instant;

use soh_fusion::dataset::{load_cycles, CsvSchema, DischargeCycle};

use super::{file_tag, fit_fold, forecast_cycles, load_pools, write_forecast_csv, Context};
use crate::config::Strategy;
use crate::error::{CliError, Stage};

/// One-step-ahead forecasts with the configured strategy. Without `input`
/// every cycle of each held-out battery is forecast; with it, the cycles of
/// that file are forecast by the ensemble of the single selected battery.
pub fn forecast(mut ctx: Context, input: Option<&Path>) -> Result<String, CliError> {
    let start = Instant::now();
    let (pools, _) = load_pools(&ctx)?;
    let batteries = ctx.test_batteries()?;
    let extra = match input {
        Some(path) => {
            if batteries.len() != 1 {
                return Err(CliError::config(
                    "--input needs exactly one battery (pass --battery or set test_batteries)",
                ));
            }
            let schema = CsvSchema {
                max_capacity_ah: ctx.cfg.max_capacity_ah,
                ..CsvSchema::default()
            };
            Some(load_cycles(path, &schema).map_err(CliError::at(Stage::Data))?)
        }
        None => None,
    };
    ctx.timed("load", start);

    let strategy = ctx.cfg.method;
    let mut summary = String::new();
    for b in &batteries {
        let start = Instant::now();
        let weights = match strategy {
            Strategy::Baseline => None,
            _ => Some(fit_fold(&ctx, &pools, b)?),
        };
        let (cycles, observed): (Vec<&DischargeCycle>, Vec<Option<f64>>) = match &extra {
            Some(cycles) => (cycles.iter().collect(), next_capacities(cycles)),
            None => ctx
                .dataset
                .raw_pairs(b)
                .map_err(CliError::at(Stage::Data))?
                .into_iter()
                .map(|(c, y)| (c, Some(y)))
                .unzip(),
        };
        let fc = forecast_cycles(
            &ctx,
            &pools,
            b,
            weights.as_ref(),
            &[strategy],
            &cycles,
            observed,
            ctx.cfg.noise_sigma,
        )?;
        let path = ctx.path(&format!("forecast/{}_{strategy}.csv", file_tag(b)))?;
        write_forecast_csv(&path, &fc, strategy, ctx.cfg.interval_level)?;
        summary.push_str(&format!(
            "{b}: {} forecasts -> {}\n",
            cycles.len(),
            path.display()
        ));
        ctx.wrote(path);
        ctx.timed(&format!("forecast/{b}"), start);
    }
    ctx.finish("forecast")?;
    Ok(summary)
}

/// Capacity of the following cycle of the same battery, when present.
fn next_capacities(cycles: &[DischargeCycle]) -> Vec<Option<f64>> {
    cycles
        .iter()
        .map(|c| {
            cycles
                .iter()
                .filter(|n| n.battery_id == c.battery_id && n.cycle_index > c.cycle_index)
                .min_by_key(|n| n.cycle_index)
                .map(|n| n.capacity_ah)
        })
        .collect()
}
