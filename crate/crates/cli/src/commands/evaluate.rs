use std::time::Instant;

use serde::Serialize;
use soh_fusion::ensemble::{DescriptorMember, EnsembleDescriptor, StackingWeights};
use soh_fusion::metrics::{
    default_levels, evaluate as score, write_calibration_csv, EvaluationReport, REPORT_COLUMNS,
};

use super::report::format_table;
use super::{
    file_tag, fit_fold, forecast_cycles, load_pools, write_forecast_csv, Context, PoolIndex,
};
use crate::config::Strategy;
use crate::error::{io_err, CliError, Stage};

#[derive(Debug, Serialize)]
struct BatteryReport<'a> {
    battery: &'a str,
    strategy: &'static str,
    #[serde(flatten)]
    report: &'a EvaluationReport,
}

/// Scores the baseline, point-stacking and distribution-stacking forecasts
/// of every held-out battery.
pub fn evaluate(mut ctx: Context) -> Result<String, CliError> {
    let start = Instant::now();
    let (pools, index) = load_pools(&ctx)?;
    let batteries = ctx.test_batteries()?;
    ctx.timed("load-pool", start);

    let mut rows: Vec<(String, Strategy, EvaluationReport)> = Vec::new();
    for b in &batteries {
        let start = Instant::now();
        let dir = format!("evaluate/{}", file_tag(b));
        let weights = fit_fold(&ctx, &pools, b)?;
        let matrix_path = ctx.path(&format!("{dir}/fitting_matrix.csv"))?;
        weights
            .matrix
            .write_csv(&matrix_path)
            .map_err(CliError::at(Stage::Run))?;
        ctx.wrote(matrix_path);
        for (strategy, w) in [
            (Strategy::StackPoint, &weights.point),
            (Strategy::StackDist, &weights.logscore),
        ] {
            let path = ctx.path(&format!("{dir}/weights_{strategy}.json"))?;
            descriptor(&index, b, w)
                .save(&path)
                .map_err(CliError::at(Stage::Run))?;
            ctx.wrote(path);
        }
        ctx.timed(&format!("fit/{b}"), start);

        let start = Instant::now();
        let pairs = ctx
            .dataset
            .raw_pairs(b)
            .map_err(CliError::at(Stage::Data))?;
        let cycles: Vec<_> = pairs.iter().map(|p| p.0).collect();
        let observed = pairs.iter().map(|p| Some(p.1)).collect();
        let fc = forecast_cycles(
            &ctx,
            &pools,
            b,
            Some(&weights),
            &Strategy::ALL,
            &cycles,
            observed,
            ctx.cfg.noise_sigma,
        )?;
        for strategy in Strategy::ALL {
            let (report, curve) = score(&fc.series(strategy)?, &default_levels())
                .map_err(CliError::at(Stage::Run))?;
            let cal = ctx.path(&format!("{dir}/calibration_{strategy}.csv"))?;
            write_calibration_csv(&cal, &curve).map_err(CliError::at(Stage::Run))?;
            ctx.wrote(cal);
            let path = ctx.path(&format!("{dir}/forecast_{strategy}.csv"))?;
            write_forecast_csv(&path, &fc, strategy, ctx.cfg.interval_level)?;
            ctx.wrote(path);
            rows.push((b.clone(), strategy, report));
        }
        let own: Vec<_> = rows.iter().filter(|r| &r.0 == b).collect();
        let path = ctx.path(&format!("{dir}/report.csv"))?;
        write_report_csv(&path, &own)?;
        ctx.wrote(path);
        let path = ctx.path(&format!("{dir}/report.json"))?;
        write_report_json(&path, &own)?;
        ctx.wrote(path);
        ctx.timed(&format!("score/{b}"), start);
    }
    let all: Vec<_> = rows.iter().collect();
    let path = ctx.path("evaluate/summary.csv")?;
    write_report_csv(&path, &all)?;
    ctx.wrote(path);
    let table = format_table(&rows);
    ctx.finish("evaluate")?;
    Ok(table)
}

fn descriptor(index: &PoolIndex, battery: &str, weights: &StackingWeights) -> EnsembleDescriptor {
    EnsembleDescriptor {
        test_battery: battery.to_string(),
        members: index
            .inner_files(battery)
            .into_iter()
            .map(|(excluded, model_file)| DescriptorMember { excluded, model_file })
            .collect(),
        weights: weights.clone(),
        fitting_set: format!(
            "one-step-ahead pairs of every battery except {battery}, predicted by models that never saw {battery}"
        ),
    }
}

/// `battery,strategy` followed by the report columns.
pub(crate) fn write_report_csv(
    path: &std::path::Path,
    rows: &[&(String, Strategy, EvaluationReport)],
) -> Result<(), CliError> {
    let err = |e: csv::Error| CliError::new(Stage::Run, format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    let mut header = vec!["battery", "strategy"];
    header.extend(REPORT_COLUMNS);
    w.write_record(&header).map_err(err)?;
    for (b, s, r) in rows {
        let mut rec = vec![b.clone(), s.to_string()];
        rec.extend(r.csv_row());
        w.write_record(&rec).map_err(err)?;
    }
    w.flush().map_err(io_err(path))
}

fn write_report_json(
    path: &std::path::Path,
    rows: &[&(String, Strategy, EvaluationReport)],
) -> Result<(), CliError> {
    let items: Vec<BatteryReport> = rows
        .iter()
        .map(|(b, s, r)| BatteryReport {
            battery: b,
            strategy: s.name(),
            report: r,
        })
        .collect();
    let text = serde_json::to_string_pretty(&items)
        .map_err(|e| CliError::new(Stage::Run, e.to_string()))?;
    std::fs::write(path, text).map_err(io_err(path))
}
