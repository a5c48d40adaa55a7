use std::time::Instant;

use soh_fusion::metrics::{default_levels, evaluate as score, Forecast};

use super::{dedup_sigmas, fit_fold, forecast_cycles, load_pools, Context};
use crate::config::Strategy;
use crate::error::{io_err, CliError, Stage};

pub const SWEEP_COLUMNS: [&str; 10] = [
    "battery",
    "sigma",
    "mse",
    "nll",
    "crps",
    "mean_predictive_variance",
    "mean_aleatoric_variance",
    "mean_epistemic_variance",
    "sharpness",
    "miscalibration_area",
];

/// Weighted mean head variance of a forecast; the rest of its variance is
/// spread between draws and between members.
fn aleatoric(f: &Forecast) -> f64 {
    match f {
        Forecast::Gaussian(g) => g.aleatoric_var,
        Forecast::Mixture(m) => m
            .weights
            .w
            .iter()
            .zip(&m.components)
            .map(|(w, c)| w * c.aleatoric_var)
            .sum(),
    }
}

/// Re-scores the distribution-stacking ensemble of each held-out battery at
/// every input-noise level. Weights are fitted once, at the configured noise
/// level, and every level reuses the same random draws.
pub fn noise_sweep(mut ctx: Context, sigmas: &[f64]) -> Result<String, CliError> {
    let (sigmas, dropped) = dedup_sigmas(sigmas);
    if !dropped.is_empty() {
        eprintln!("warning: ignoring repeated noise levels {dropped:?}");
    }
    if sigmas.is_empty() {
        return Err(CliError::config("noise sweep needs at least one sigma"));
    }
    let start = Instant::now();
    let (pools, _) = load_pools(&ctx)?;
    let batteries = ctx.test_batteries()?;
    ctx.timed("load-pool", start);

    let path = ctx.path("noise_sweep/sweep.csv")?;
    let err = |e: csv::Error| CliError::new(Stage::Run, format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(&path).map_err(err)?;
    w.write_record(SWEEP_COLUMNS).map_err(err)?;
    let mut table = format!(
        "{:<10} {:>6} {:>10} {:>9} {:>9} {:>12}\n",
        "battery", "sigma", "mse", "nll", "crps", "pred_var"
    );
    for b in &batteries {
        let start = Instant::now();
        let weights = fit_fold(&ctx, &pools, b)?;
        let pairs = ctx
            .dataset
            .raw_pairs(b)
            .map_err(CliError::at(Stage::Data))?;
        let cycles: Vec<_> = pairs.iter().map(|p| p.0).collect();
        for &sigma in &sigmas {
            let observed = pairs.iter().map(|p| Some(p.1)).collect();
            let fc = forecast_cycles(
                &ctx,
                &pools,
                b,
                Some(&weights),
                &[Strategy::StackDist],
                &cycles,
                observed,
                sigma,
            )?;
            let (r, _) = score(&fc.series(Strategy::StackDist)?, &default_levels())
                .map_err(CliError::at(Stage::Run))?;
            let variance = r.sharpness * r.sharpness;
            let forecasts = &fc.by_strategy[Strategy::StackDist.name()];
            let alea = forecasts.iter().map(aleatoric).sum::<f64>() / forecasts.len() as f64;
            w.write_record([
                b.clone(),
                sigma.to_string(),
                r.mse.to_string(),
                r.nll.to_string(),
                r.crps.to_string(),
                variance.to_string(),
                alea.to_string(),
                (variance - alea).to_string(),
                r.sharpness.to_string(),
                r.miscalibration_area.to_string(),
            ])
            .map_err(err)?;
            table.push_str(&format!(
                "{:<10} {:>6} {:>10.3e} {:>9.4} {:>9.5} {:>12.4e}\n",
                b, sigma, r.mse, r.nll, r.crps, variance
            ));
        }
        ctx.timed(&format!("sweep/{b}"), start);
    }
    w.flush().map_err(io_err(&path))?;
    ctx.wrote(path);
    ctx.finish("noise-sweep")?;
    Ok(table)
}
