use std::collections::BTreeMap;
use std::path::Path;

use soh_fusion::metrics::EvaluationReport;

use crate::config::Strategy;
use crate::error::{CliError, Stage};
use crate::manifest::RunManifest;

/// One row per battery and strategy with the six headline metrics.
pub(crate) fn format_table(rows: &[(String, Strategy, EvaluationReport)]) -> String {
    let mut out = format!(
        "{:<10} {:<12} {:>10} {:>8} {:>9} {:>9} {:>9} {:>10}\n",
        "battery", "strategy", "mse", "r2", "nll", "crps", "cal_area", "sharpness"
    );
    for (b, s, r) in rows {
        out.push_str(&format!(
            "{:<10} {:<12} {:>10.3e} {:>8.4} {:>9.4} {:>9.5} {:>9.4} {:>10.5}\n",
            b,
            s.name(),
            r.mse,
            r.r2,
            r.nll,
            r.crps,
            r.miscalibration_area,
            r.sharpness
        ));
    }
    out
}

fn read_summary(path: &Path) -> Result<Vec<(String, Strategy, EvaluationReport)>, CliError> {
    let corrupt =
        |why: String| CliError::new(Stage::Manifest, format!("{}: {why}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(|e| corrupt(e.to_string()))?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| corrupt(e.to_string()))?;
        let f = |i: usize| -> Result<f64, CliError> {
            rec.get(i)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| corrupt(format!("bad value in column {i}")))
        };
        let strategy: Strategy = rec.get(1).unwrap_or("").parse().map_err(corrupt)?;
        rows.push((
            rec.get(0).unwrap_or("").to_string(),
            strategy,
            EvaluationReport {
                mse: f(2)?,
                r2: f(3)?,
                nll: f(4)?,
                crps: f(5)?,
                miscalibration_area: f(6)?,
                sharpness: f(7)?,
                nll_sum: f(8)?,
                n: f(9)? as usize,
            },
        ));
    }
    Ok(rows)
}

/// Summary of a run directory. Reads only.
pub fn report(dir: &Path) -> Result<String, CliError> {
    let manifest = RunManifest::load_required(dir)?;
    manifest.verify(dir)?;
    let mut out = format!(
        "run {} (version {}, dataset {})\n",
        dir.display(),
        manifest.software_version,
        &manifest.dataset_fingerprint[..manifest.dataset_fingerprint.len().min(12)]
    );
    for (cmd, rec) in &manifest.commands {
        let total: f64 = rec.timings.iter().map(|t| t.seconds).sum();
        out.push_str(&format!("  {cmd}: {total:.1} s\n"));
    }
    let summary = "evaluate/summary.csv";
    if manifest.artifacts.iter().any(|a| a == summary) {
        out.push('\n');
        out.push_str(&format_table(&read_summary(&dir.join(summary))?));
    }
    let sweep = "noise_sweep/sweep.csv";
    if manifest.artifacts.iter().any(|a| a == sweep) {
        let text = std::fs::read_to_string(dir.join(sweep))
            .map_err(|e| CliError::new(Stage::Manifest, format!("{sweep}: {e}")))?;
        out.push_str("\nnoise sweep\n");
        out.push_str(&text);
    }
    let mut groups: BTreeMap<&str, usize> = BTreeMap::new();
    for a in &manifest.artifacts {
        *groups.entry(a.split('/').next().unwrap_or(a)).or_default() += 1;
    }
    out.push_str(&format!("\n{} files\n", manifest.artifacts.len()));
    for (g, n) in groups {
        out.push_str(&format!("  {g}: {n}\n"));
    }
    for a in &manifest.artifacts {
        out.push_str(&format!("    {a}\n"));
    }
    Ok(out)
}
