//! Acceptance checks, one `PASS`/`FAIL` line per criterion.
//!
//! Criteria 6 to 8 need the NASA cycle CSV (long format, see the README);
//! point `SOHFUSE_NASA_CSV` at it to run them. Without it they are reported
//! as `FAIL ... not run` and do not affect the exit status. The process exits
//! non-zero when a criterion that ran failed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};
use soh_fusion::bcnn::*;
use soh_fusion::dataset::*;
use soh_fusion::ensemble::*;
use soh_fusion::metrics::*;

const CRPS_TOL: f64 = 1e-4;
const CRPS_SECONDS: f64 = 10.0;
const CRPS_CASES: usize = 200;
const GRAD_TOL: f64 = 1e-4;
const GRAD_SECONDS: f64 = 60.0;
/// Coordinates whose one-sided slopes disagree sit on a ReLU or Laplace kink
/// and have no derivative; at most this fraction may be skipped.
const GRAD_KINK_FRACTION: f64 = 0.01;
const GRID_TOL: f64 = 1e-6;
const GRID_STEPS: usize = 100;
const GRID_TRIALS: usize = 50;
const DOMINANCE_TOL: f64 = 1e-6;
const CALIBRATION_AREA: f64 = 0.05;
const CALIBRATION_T: usize = 1000;
const NASA_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const NASA_RUNTIME_SECONDS: f64 = 1800.0;
const SWEEP_SEEDS: [u64; 3] = [1, 2, 3];
const SWEEP_SIGMAS: &str = "0,0.05,0.1,0.2";
/// Allowed drop between consecutive noise levels, relative.
const MONOTONE_SLACK: f64 = 0.0;

/// Three batteries of full length with shorter cycles and fewer draws per
/// forecast than the defaults, to keep the run to about a minute per seed.
const FIXTURE: [&str; 4] = [
    "synthetic_batteries=3",
    "synthetic_samples=150",
    "mc_predict_samples=40",
    "lambda_reg=0",
];

/// Battery number, then bounds on the median proposed-ensemble MSE, R²,
/// CRPS and mean NLL.
const BANDS: [(u32, f64, f64, f64, f64); 4] = [
    (5, 0.001, 0.95, 0.03, 0.0),
    (6, 0.0016, 0.934, 0.035, 0.0),
    (7, 0.0011, 0.936, 0.032, 0.0),
    (18, 0.0017, 0.874, 0.035, 0.0),
];

enum Status {
    Pass,
    Fail,
    NotRun,
}

struct Outcome {
    id: u8,
    name: &'static str,
    status: Status,
    detail: String,
}

impl Outcome {
    fn check(id: u8, name: &'static str, pass: bool, detail: String) -> Self {
        let status = if pass { Status::Pass } else { Status::Fail };
        Outcome {
            id,
            name,
            status,
            detail,
        }
    }

    fn print(&self) {
        let tag = match self.status {
            Status::Pass => "PASS",
            Status::Fail | Status::NotRun => "FAIL",
        };
        println!("{tag} {:>2} {}: {}", self.id, self.name, self.detail);
    }
}

fn phi(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

fn simpson(a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let n = 20_000;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * h);
    }
    s * h / 3.0
}

fn crps_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..CRPS_CASES {
        let mu: f64 = rng.random_range(-3.0..3.0);
        let sigma: f64 = rng.random_range(0.05..3.0);
        let y = mu + sigma * rng.random_range(-5.0..5.0);
        let cdf = |x: f64| phi((x - mu) / sigma);
        let (lo, hi) = ((mu - 10.0 * sigma).min(y), (mu + 10.0 * sigma).max(y));
        let oracle =
            simpson(lo, y, |x| cdf(x).powi(2)) + simpson(y, hi, |x| (1.0 - cdf(x)).powi(2));
        worst = worst.max((crps_gaussian(mu, sigma, y) - oracle).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome::check(
        1,
        "CRPS closed form vs integration",
        worst < CRPS_TOL && secs < CRPS_SECONDS,
        format!("{CRPS_CASES} cases, max |diff| {worst:.2e} (< {CRPS_TOL:e}), {secs:.2} s (< {CRPS_SECONDS} s)"),
    )
}

const FOUR_CHANNELS: [Channel; 4] = [
    Channel::Voltage,
    Channel::Temperature,
    Channel::Time,
    Channel::Current,
];

/// Worst relative error over differentiable coordinates and the number of
/// kink coordinates, central differences with h = 1e-5.
fn gradient_error(
    model: &BcnnModel,
    x: &soh_fusion::numeric::Tensor,
    y: &[f64],
    draws: &[WeightNoise],
    kl: f64,
) -> (f64, usize, usize) {
    let loss = |m: &BcnnModel| elbo_loss(m, x, y, draws, kl).unwrap().loss_value();
    let mut elbo = elbo_loss(model, x, y, draws, kl).unwrap();
    elbo.graph.backward(elbo.loss).unwrap();
    let analytic: Vec<_> = elbo
        .mu_grads()
        .into_iter()
        .chain(elbo.rho_grads())
        .collect();
    let base = elbo.loss_value();
    let k = model.params.len();
    let h = 1e-5;
    let (mut worst, mut kinks, mut total) = (0.0f64, 0, 0);
    for slot in 0..2 * k {
        for j in 0..analytic[slot].len() {
            let eval = |delta: f64| {
                let mut m = model.clone();
                let p = &mut m.params[slot % k];
                let t = if slot < k { &mut p.mu } else { &mut p.rho };
                t.values_mut()[j] += delta;
                loss(&m)
            };
            let (up, down) = (eval(h), eval(-h));
            total += 1;
            let (right, left) = ((up - base) / h, (base - down) / h);
            if (right - left).abs() > 1e-3 * right.abs().max(left.abs()).max(1e-2) {
                kinks += 1;
                continue;
            }
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[slot].values()[j];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3));
        }
    }
    (worst, kinks, total)
}

fn gradient_integrity() -> Outcome {
    let start = Instant::now();
    let cfg = SyntheticConfig {
        batteries: 1,
        cycles: 17,
        ..SyntheticConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ds = generate_synthetic(&cfg, &FOUR_CHANNELS, &mut rng).unwrap();
    let ds = BatteryDataset::new(
        ds.all_cycles().cloned().collect(),
        Some(371),
        &FOUR_CHANNELS,
    )
    .unwrap();
    let pairs = ds
        .build_all_pairs(&ds.fit_normalization().unwrap())
        .unwrap();
    let config = BcnnConfig {
        epochs: 50,
        batch_size: 16,
        ..BcnnConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut model = init_model(&config, &mut rng).unwrap();
    let feats: Vec<_> = pairs[..4].iter().map(|p| &p.features).collect();
    let x = stack_inputs(&feats).unwrap();
    let y: Vec<f64> = pairs[..4].iter().map(|p| p.label).collect();
    let kl = 1.0 / pairs.len() as f64;

    let draws = vec![WeightNoise::draw(&model, &mut rng)];
    let (init_err, init_kinks, total) = gradient_error(&model, &x, &y, &draws, kl);
    model.train(&pairs, &mut rng).unwrap();
    let steps = model.history.len() * pairs.len().div_ceil(config.batch_size);
    let draws = vec![WeightNoise::draw(&model, &mut rng)];
    let (late_err, late_kinks, _) = gradient_error(&model, &x, &y, &draws, kl);
    let secs = start.elapsed().as_secs_f64();
    let kink_cap = (GRAD_KINK_FRACTION * total as f64) as usize;
    Outcome::check(
        2,
        "ELBO gradients vs finite differences",
        model.parameter_count() == 1300
            && init_err < GRAD_TOL
            && late_err < GRAD_TOL
            && init_kinks <= kink_cap
            && late_kinks <= kink_cap
            && secs < GRAD_SECONDS,
        format!(
            "{total} parameters, max rel err {init_err:.1e} at init, {late_err:.1e} after {steps} steps \
             (< {GRAD_TOL:e}); kinks {init_kinks}/{late_kinks}; {secs:.1} s (< {GRAD_SECONDS} s)"
        ),
    )
}

fn logscore_of(log_dens: &[Vec<f64>], w: &[f64]) -> f64 {
    log_dens
        .iter()
        .map(|row| {
            row.iter()
                .zip(w)
                .map(|(l, wk)| wk * l.exp())
                .sum::<f64>()
                .ln()
        })
        .sum::<f64>()
        / log_dens.len() as f64
}

fn weight_optimality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut grid = Vec::new();
    for a in 0..=GRID_STEPS {
        for b in 0..=GRID_STEPS - a {
            let c = GRID_STEPS - a - b;
            grid.push([a, b, c].map(|v| v as f64 / GRID_STEPS as f64));
        }
    }
    let cfg = FitConfig::default();
    let (mut worst_ls, mut worst_mse) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for trial in 0..GRID_TRIALS {
        let lambda = if trial % 2 == 0 { 0.0 } else { 0.01 };
        let offsets: Vec<f64> = (0..3).map(|_| rng.random_range(-0.5..0.5)).collect();
        let scales: Vec<f64> = (0..3).map(|_| rng.random_range(0.05..1.0)).collect();
        let (mut log_dens, mut means, mut ys) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..40 {
            let y: f64 = rng.random_range(0.0..2.0);
            let row: Vec<(f64, f64)> = (0..3)
                .map(|k| {
                    (
                        y + offsets[k] + rng.random_range(-0.3..0.3),
                        scales[k] * rng.random_range(0.8..1.2),
                    )
                })
                .collect();
            log_dens.push(
                row.iter()
                    .map(|(m, s)| {
                        -0.5 * ((y - m) / s).powi(2)
                            - s.ln()
                            - 0.5 * (2.0 * std::f64::consts::PI).ln()
                    })
                    .collect::<Vec<f64>>(),
            );
            means.push(row.iter().map(|p| p.0).collect::<Vec<f64>>());
            ys.push(y);
        }
        let ridge = |w: &[f64]| lambda * w.iter().map(|v| v * v).sum::<f64>();
        let ls = |w: &[f64]| logscore_of(&log_dens, w) - ridge(w);
        let sse = |w: &[f64]| {
            means
                .iter()
                .zip(&ys)
                .map(|(row, t)| (t - row.iter().zip(w).map(|(m, wk)| m * wk).sum::<f64>()).powi(2))
                .sum::<f64>()
                + ridge(w)
        };
        let fitted = fit_logscore_weights(&log_dens, lambda, &cfg).unwrap();
        let best = grid.iter().map(|w| ls(w)).fold(f64::NEG_INFINITY, f64::max);
        worst_ls = worst_ls.max(best - ls(&fitted.w));
        let fitted = fit_pointpred_weights(&means, &ys, lambda, &cfg).unwrap();
        let best = grid.iter().map(|w| sse(w)).fold(f64::INFINITY, f64::min);
        worst_mse = worst_mse.max(sse(&fitted.w) - best);
    }
    Outcome::check(
        3,
        "weight fits vs simplex grid",
        worst_ls <= GRID_TOL && worst_mse <= GRID_TOL,
        format!(
            "K=3, {GRID_TRIALS} trials, grid step {}; worst shortfall log score {worst_ls:.1e}, MSE {worst_mse:.1e} (<= {GRID_TOL:e})",
            1.0 / GRID_STEPS as f64
        ),
    )
}

fn calibration_consistency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let gp = |mu: f64, sigma: f64| GaussianPrediction {
        mu,
        sigma,
        aleatoric_var: sigma * sigma,
        epistemic_var: 0.0,
    };
    let mut forecasts: Vec<Forecast> = Vec::new();
    let mut ys = Vec::new();
    for t in 0..CALIBRATION_T {
        if t % 2 == 0 {
            let (mu, sigma) = (rng.random_range(1.0..2.0), rng.random_range(0.01..0.1));
            ys.push(Normal::new(mu, sigma).unwrap().sample(&mut rng));
            forecasts.push(gp(mu, sigma).into());
        } else {
            let parts = [
                (0.3, rng.random_range(1.0..1.5), 0.04),
                (0.7, rng.random_range(1.5..2.0), 0.09),
            ];
            let (_, mu, sigma) = if rng.random::<f64>() < parts[0].0 {
                parts[0]
            } else {
                parts[1]
            };
            ys.push(Normal::new(mu, sigma).unwrap().sample(&mut rng));
            let weights =
                StackingWeights::new(vec![parts[0].0, parts[1].0], WeightMethod::LogScore, 0.0)
                    .unwrap();
            let m = MixturePrediction::new(parts.iter().map(|p| gp(p.1, p.2)).collect(), weights)
                .unwrap();
            forecasts.push(m.into());
        }
    }
    let series = ForecastSeries::from_parts(forecasts, &ys).unwrap();
    let (report, _) = evaluate(&series, &default_levels()).unwrap();
    Outcome::check(
        5,
        "calibration of self-sampled observations",
        report.miscalibration_area < CALIBRATION_AREA,
        format!(
            "T={CALIBRATION_T} Gaussian and mixture forecasts, area {:.4} (< {CALIBRATION_AREA})",
            report.miscalibration_area
        ),
    )
}

fn sohfuse(out: &Path, sets: &[&str], seed: u64, command: &[&str]) -> Result<String, String> {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sohfuse"));
    cmd.env_remove("SOHFUSE_OUT")
        .arg("--out")
        .arg(out)
        .arg("--seed")
        .arg(seed.to_string());
    for s in sets {
        cmd.arg("--set").arg(s);
    }
    let o = cmd.args(command).output().map_err(|e| e.to_string())?;
    if o.status.success() {
        Ok(String::from_utf8_lossy(&o.stdout).into_owned())
    } else {
        Err(format!(
            "sohfuse {command:?}: {}",
            String::from_utf8_lossy(&o.stderr).trim()
        ))
    }
}

fn pipeline(out: &Path, sets: &[&str], seed: u64, commands: &[&[&str]]) -> Result<(), String> {
    for c in commands {
        sohfuse(out, sets, seed, c)?;
    }
    Ok(())
}

fn read_csv(path: &Path) -> Result<Vec<BTreeMap<String, String>>, String> {
    let mut r = csv::Reader::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let header = r.headers().map_err(|e| e.to_string())?.clone();
    r.records()
        .map(|rec| {
            let rec = rec.map_err(|e| e.to_string())?;
            Ok(header
                .iter()
                .zip(rec.iter())
                .map(|(h, v)| (h.to_string(), v.to_string()))
                .collect())
        })
        .collect()
}

fn num(row: &BTreeMap<String, String>, key: &str) -> f64 {
    row.get(key)
        .and_then(|v| v.parse().ok())
        .unwrap_or(f64::NAN)
}

/// Validation NLL of the fitted stack and of each member on one fold's
/// fitting set, computed from the written prediction matrix.
fn fold_dominance(fold: &Path) -> Result<(f64, f64), String> {
    let rows = read_csv(&fold.join("fitting_matrix.csv"))?;
    let text =
        std::fs::read_to_string(fold.join("weights_stack-dist.json")).map_err(|e| e.to_string())?;
    let desc: EnsembleDescriptor = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let order: Vec<&str> = desc.members.iter().map(|m| m.excluded.as_str()).collect();
    let mut by_obs: BTreeMap<(String, u64), Vec<f64>> = BTreeMap::new();
    for r in &rows {
        let key = (r["battery_id"].clone(), num(r, "cycle_index") as u64);
        let entry = by_obs
            .entry(key)
            .or_insert_with(|| vec![f64::NAN; order.len()]);
        let k = order
            .iter()
            .position(|m| *m == r["model"])
            .ok_or("model missing from descriptor")?;
        entry[k] = num(r, "log_density");
    }
    let log_dens: Vec<Vec<f64>> = by_obs.into_values().collect();
    let stacked = -logscore_of(&log_dens, &desc.weights.w);
    let best = (0..order.len())
        .map(|k| -log_dens.iter().map(|row| row[k]).sum::<f64>() / log_dens.len() as f64)
        .fold(f64::INFINITY, f64::min);
    Ok((stacked, best))
}

fn dominance(runs: &[PathBuf]) -> Outcome {
    let mut folds = 0;
    let mut worst = f64::NEG_INFINITY;
    let mut errors = Vec::new();
    for run in runs {
        let Ok(entries) = std::fs::read_dir(run.join("evaluate")) else {
            errors.push(format!("{}: no evaluate output", run.display()));
            continue;
        };
        let mut dirs: Vec<_> = entries
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_dir())
            .collect();
        dirs.sort();
        for d in dirs {
            match fold_dominance(&d) {
                Ok((stacked, best)) => {
                    folds += 1;
                    worst = worst.max(stacked - best);
                }
                Err(e) => errors.push(e),
            }
        }
    }
    let pass = errors.is_empty() && folds > 0 && worst <= DOMINANCE_TOL;
    let mut detail = format!("{folds} folds, lambda 0, max(stacked - best member NLL) {worst:.2e} (<= {DOMINANCE_TOL:e})");
    if !errors.is_empty() {
        detail.push_str(&format!("; errors: {}", errors.join("; ")));
    }
    Outcome::check(
        4,
        "stacking dominates every member on its fitting set",
        pass,
        detail,
    )
}

fn noise_monotone(runs: &[(u64, Result<PathBuf, String>)]) -> Outcome {
    let mut checked = 0;
    let mut drops = Vec::new();
    let mut errors = Vec::new();
    for (seed, run) in runs {
        let rows = match run
            .as_ref()
            .map_err(|e| e.clone())
            .and_then(|r| read_csv(&r.join("noise_sweep/sweep.csv")))
        {
            Ok(rows) => rows,
            Err(e) => {
                errors.push(format!("seed {seed}: {e}"));
                continue;
            }
        };
        let mut series: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
        for r in &rows {
            series
                .entry(r["battery"].clone())
                .or_default()
                .push((num(r, "sigma"), num(r, "mean_predictive_variance")));
        }
        for (b, mut s) in series {
            s.sort_by(|a, b| a.0.total_cmp(&b.0));
            checked += 1;
            for w in s.windows(2) {
                let floor = w[0].1 * (1.0 - MONOTONE_SLACK);
                if w[1].1.is_nan() || w[1].1 < floor {
                    drops.push(format!(
                        "seed {seed} {b}: {:.4e} at {} -> {:.4e} at {}",
                        w[0].1, w[0].0, w[1].1, w[1].0
                    ));
                }
            }
        }
    }
    let pass = errors.is_empty() && drops.is_empty() && checked > 0;
    let mut detail =
        format!("sigma {{{SWEEP_SIGMAS}}}, {checked} battery sweeps over seeds {SWEEP_SEEDS:?}");
    if !drops.is_empty() {
        detail.push_str(&format!("; decreases: {}", drops.join("; ")));
    }
    if !errors.is_empty() {
        detail.push_str(&format!("; errors: {}", errors.join("; ")));
    }
    Outcome::check(
        9,
        "predictive variance grows with input noise",
        pass,
        detail,
    )
}

fn csv_hashes(dir: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).into_iter().flatten().flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "csv") {
                let bytes = std::fs::read(&p).unwrap_or_default();
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, hex::encode(Sha256::digest(bytes)));
            }
        }
    }
    out
}

fn determinism(first: &Result<PathBuf, String>, second: &Result<PathBuf, String>) -> Outcome {
    let (a, b) = match (first, second) {
        (Ok(a), Ok(b)) => (csv_hashes(a), csv_hashes(b)),
        (Err(e), _) | (_, Err(e)) => {
            return Outcome::check(10, "reruns are hash-identical", false, e.clone())
        }
    };
    let differing: Vec<&String> = a
        .keys()
        .chain(b.keys())
        .filter(|k| a.get(*k) != b.get(*k))
        .collect();
    Outcome::check(
        10,
        "reruns are hash-identical",
        differing.is_empty() && !a.is_empty(),
        if differing.is_empty() {
            format!(
                "train, evaluate, forecast, noise-sweep under seed 1: {} CSV files identical",
                a.len()
            )
        } else {
            format!("differing files: {differing:?}")
        },
    )
}

fn battery_number(id: &str) -> Option<u32> {
    let digits: String = id
        .chars()
        .rev()
        .take_while(|c| c.is_ascii_digit())
        .collect();
    digits.chars().rev().collect::<String>().parse().ok()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median over seeds of each `(battery number, strategy, metric)`.
type Medians = BTreeMap<(u32, String, String), f64>;

fn nasa_medians(summaries: &[Vec<BTreeMap<String, String>>]) -> Medians {
    let mut all: BTreeMap<(u32, String, String), Vec<f64>> = BTreeMap::new();
    for rows in summaries {
        for r in rows {
            let Some(n) = battery_number(&r["battery"]) else {
                continue;
            };
            for m in ["mse", "r2", "nll", "crps", "miscalibration_area"] {
                all.entry((n, r["strategy"].clone(), m.to_string()))
                    .or_default()
                    .push(num(r, m));
            }
        }
    }
    all.into_iter().map(|(k, v)| (k, median(v))).collect()
}

fn nasa(csv_path: &Path, runs: &mut Vec<PathBuf>, keep: &Path) -> Vec<Outcome> {
    let data = format!("dataset={}", csv_path.display());
    let mut summaries = Vec::new();
    let mut slowest = 0.0f64;
    let mut errors = Vec::new();
    for seed in NASA_SEEDS {
        let dir = keep.join(format!("nasa-{seed}"));
        let start = Instant::now();
        let run = pipeline(&dir, &[&data], seed, &[&["train"], &["evaluate"]]);
        slowest = slowest.max(start.elapsed().as_secs_f64());
        let summary = run.and_then(|_| read_csv(&dir.join("evaluate/summary.csv")));
        match summary {
            Ok(rows) => summaries.push(rows),
            Err(e) => errors.push(format!("seed {seed}: {e}")),
        }
        // Same pool, weights refitted without the ridge term, for the dominance check.
        let lambda_zero = dir.join("lambda-0");
        if copy_tree(&dir.join("pool"), &lambda_zero.join("pool")).is_ok()
            && sohfuse(&lambda_zero, &[&data, "lambda_reg=0"], seed, &["evaluate"]).is_ok()
        {
            runs.push(lambda_zero);
        }
    }
    if !errors.is_empty() || summaries.is_empty() {
        let why = format!("pipeline failed: {}", errors.join("; "));
        return vec![
            Outcome::check(6, "NASA reproduction bands", false, why.clone()),
            Outcome::check(7, "ensemble vs baseline ordering", false, why.clone()),
            Outcome::check(8, "calibration ordering on battery 5", false, why),
        ];
    }
    let med = nasa_medians(&summaries);
    let get = |n: u32, s: &str, m: &str| {
        med.get(&(n, s.to_string(), m.to_string()))
            .copied()
            .unwrap_or(f64::NAN)
    };

    let mut c6 = slowest <= NASA_RUNTIME_SECONDS;
    let mut d6 = vec![format!(
        "slowest seed {slowest:.0} s (<= {NASA_RUNTIME_SECONDS} s)"
    )];
    for (n, mse, r2, crps, nll) in BANDS {
        let got = [
            get(n, "stack-dist", "mse"),
            get(n, "stack-dist", "r2"),
            get(n, "stack-dist", "crps"),
            get(n, "stack-dist", "nll"),
        ];
        let ok = got[0] <= mse && got[1] >= r2 && got[2] <= crps && got[3] <= nll;
        c6 &= ok;
        d6.push(format!(
            "#{n} mse {:.4} r2 {:.4} crps {:.4} nll {:.3} {}",
            got[0],
            got[1],
            got[2],
            got[3],
            if ok { "in band" } else { "out of band" }
        ));
    }

    let numbers = BANDS.map(|b| b.0);
    let wins = numbers
        .iter()
        .filter(|&&n| get(n, "stack-dist", "crps") < get(n, "baseline", "crps"))
        .count();
    let nll_ok = [5, 6]
        .iter()
        .all(|&n| get(n, "stack-dist", "nll") <= get(n, "stack-point", "nll"));
    let d7 = format!(
        "CRPS below baseline on {wins}/4 (>= 3); NLL vs point stacking #5 {:.3}/{:.3}, #6 {:.3}/{:.3}",
        get(5, "stack-dist", "nll"),
        get(5, "stack-point", "nll"),
        get(6, "stack-dist", "nll"),
        get(6, "stack-point", "nll")
    );

    let (dist, point) = (
        get(5, "stack-dist", "miscalibration_area"),
        get(5, "stack-point", "miscalibration_area"),
    );
    vec![
        Outcome::check(6, "NASA reproduction bands", c6, d6.join("; ")),
        Outcome::check(7, "ensemble vs baseline ordering", wins >= 3 && nll_ok, d7),
        Outcome::check(
            8,
            "calibration ordering on battery 5",
            dist < point,
            format!("area distribution stacking {dist:.3} vs point stacking {point:.3} (reference 0.12 vs 0.26)"),
        ),
    ]
}

fn copy_tree(from: &Path, to: &Path) -> std::io::Result<()> {
    if from.is_dir() {
        std::fs::create_dir_all(to)?;
        for e in std::fs::read_dir(from)? {
            let e = e?;
            copy_tree(&e.path(), &to.join(e.file_name()))?;
        }
        Ok(())
    } else {
        std::fs::copy(from, to).map(|_| ())
    }
}

fn main() {
    // `cargo test` passes harness flags such as `--nocapture`; list mode has nothing to list.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let scratch = tempfile::tempdir().expect("temporary directory");
    let root = scratch.path();
    let mut outcomes = vec![
        crps_oracle(),
        gradient_integrity(),
        weight_optimality(),
        calibration_consistency(),
    ];
    for o in &outcomes {
        o.print();
    }

    let commands: [&[&str]; 4] = [
        &["train"],
        &["evaluate"],
        &["forecast"],
        &["noise-sweep", "--sigmas", SWEEP_SIGMAS],
    ];
    let mut sweeps = Vec::new();
    for seed in SWEEP_SEEDS {
        let dir = root.join(format!("synthetic-{seed}"));
        sweeps.push((seed, pipeline(&dir, &FIXTURE, seed, &commands).map(|_| dir)));
    }
    let rerun_dir = root.join("synthetic-1-rerun");
    let rerun = pipeline(&rerun_dir, &FIXTURE, SWEEP_SEEDS[0], &commands).map(|_| rerun_dir);

    let mut dominance_runs: Vec<PathBuf> = sweeps
        .iter()
        .filter_map(|(_, r)| r.as_ref().ok().cloned())
        .collect();
    let nasa_outcomes = match std::env::var_os("SOHFUSE_NASA_CSV") {
        Some(path) => nasa(Path::new(&path), &mut dominance_runs, root),
        None => [
            (6, "NASA reproduction bands"),
            (7, "ensemble vs baseline ordering"),
            (8, "calibration ordering on battery 5"),
        ]
        .into_iter()
        .map(|(id, name)| Outcome {
            id,
            name,
            status: Status::NotRun,
            detail: "not run, SOHFUSE_NASA_CSV is unset".into(),
        })
        .collect(),
    };

    let late = vec![
        dominance(&dominance_runs),
        noise_monotone(&sweeps),
        determinism(&sweeps[0].1, &rerun),
    ];
    for o in late.iter().chain(&nasa_outcomes) {
        o.print();
    }
    outcomes.extend(late);
    outcomes.extend(nasa_outcomes);
    outcomes.sort_by_key(|o| o.id);

    let failed: Vec<u8> = outcomes
        .iter()
        .filter(|o| matches!(o.status, Status::Fail))
        .map(|o| o.id)
        .collect();
    let skipped: Vec<u8> = outcomes
        .iter()
        .filter(|o| matches!(o.status, Status::NotRun))
        .map(|o| o.id)
        .collect();
    println!(
        "acceptance: {} passed, {} failed {failed:?}, {} not run {skipped:?}",
        outcomes.len() - failed.len() - skipped.len(),
        failed.len(),
        skipped.len()
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
