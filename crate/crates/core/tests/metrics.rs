use std::time::Instant;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use soh_fusion::bcnn::GaussianPrediction;
use soh_fusion::ensemble::{MixturePrediction, StackingWeights, WeightMethod};
use soh_fusion::metrics::*;

fn gp(mu: f64, sigma: f64) -> GaussianPrediction {
    GaussianPrediction {
        mu,
        sigma,
        aleatoric_var: sigma * sigma,
        epistemic_var: 0.0,
    }
}

fn mixture(parts: &[(f64, f64, f64)]) -> MixturePrediction {
    let total: f64 = parts.iter().map(|p| p.0).sum();
    MixturePrediction::new(
        parts.iter().map(|&(_, m, s)| gp(m, s)).collect(),
        StackingWeights::new(
            parts.iter().map(|p| p.0 / total).collect(),
            WeightMethod::LogScore,
            0.0,
        )
        .unwrap(),
    )
    .unwrap()
}

/// Normal CDF from the error function series, independent of the library.
fn phi(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// `integral (F(x) - 1{x >= y})^2 dx` by composite Simpson on both sides of `y`.
fn crps_by_integration(cdf: impl Fn(f64) -> f64, lo: f64, hi: f64, y: f64) -> f64 {
    let simpson = |a: f64, b: f64, f: &dyn Fn(f64) -> f64| {
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
    };
    let left = simpson(lo.min(y), y, &|x| cdf(x).powi(2));
    let right = simpson(y, hi.max(y), &|x| (1.0 - cdf(x)).powi(2));
    left + right
}

#[test]
fn gaussian_crps_matches_integration_on_random_cases() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..200 {
        let mu: f64 = rng.random_range(-3.0..3.0);
        let sigma: f64 = rng.random_range(0.05..3.0);
        let y: f64 = mu + sigma * rng.random_range(-5.0..5.0);
        let oracle = crps_by_integration(
            |x| phi((x - mu) / sigma),
            mu - 10.0 * sigma,
            mu + 10.0 * sigma,
            y,
        );
        let closed = crps_gaussian(mu, sigma, y);
        assert!(
            (closed - oracle).abs() < 1e-4,
            "mu {mu} sigma {sigma} y {y}: {closed} vs {oracle}"
        );
    }
    assert!(start.elapsed().as_secs() < 10);
}

#[test]
fn reference_crps_values_from_integration() {
    let standard = |x: f64| phi(x);
    let at_zero = crps_by_integration(standard, -10.0, 10.0, 0.0);
    assert!((at_zero - 0.233_695_0).abs() < 1e-6);
    assert!((crps_gaussian(0.0, 1.0, 0.0) - at_zero).abs() < 1e-6);
    let at_196 = crps_by_integration(standard, -10.0, 10.0, 1.96);
    assert!((at_196 - 1.4147).abs() < 1e-4);
    assert!((crps_gaussian(0.0, 1.0, 1.96) - at_196).abs() < 1e-4);
}

#[test]
fn mixture_crps_matches_integration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..60 {
        let k = rng.random_range(1..5);
        let parts: Vec<(f64, f64, f64)> = (0..k)
            .map(|_| {
                (
                    rng.random_range(0.05..1.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(0.05..1.5),
                )
            })
            .collect();
        let m = mixture(&parts);
        let lo = parts
            .iter()
            .map(|p| p.1 - 10.0 * p.2)
            .fold(f64::INFINITY, f64::min);
        let hi = parts
            .iter()
            .map(|p| p.1 + 10.0 * p.2)
            .fold(f64::NEG_INFINITY, f64::max);
        let y = rng.random_range(lo / 2.0..hi / 2.0);
        let cdf = |x: f64| {
            parts
                .iter()
                .map(|p| p.0 * phi((x - p.1) / p.2))
                .sum::<f64>()
                / m_total(&parts)
        };
        let oracle = crps_by_integration(cdf, lo, hi, y);
        let closed = crps_mixture(&m, y);
        assert!((closed - oracle).abs() < 1e-4, "{closed} vs {oracle}");
    }
}

fn m_total(parts: &[(f64, f64, f64)]) -> f64 {
    parts.iter().map(|p| p.0).sum()
}

#[test]
fn accuracy_metrics_match_loop_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let n = 300;
    let mus: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..2.0)).collect();
    let ys: Vec<f64> = mus
        .iter()
        .map(|m| m + rng.random_range(-0.1..0.1))
        .collect();
    let series =
        ForecastSeries::from_parts(mus.iter().map(|&m| gp(m, 0.05).into()).collect(), &ys).unwrap();

    let mut sq = 0.0;
    for i in 0..n {
        sq += (ys[i] - mus[i]) * (ys[i] - mus[i]);
    }
    assert!((mse(&series) - sq / n as f64).abs() <= 1e-12);

    let mut mean_y = 0.0;
    for y in &ys {
        mean_y += y;
    }
    mean_y /= n as f64;
    let mut tot = 0.0;
    for y in &ys {
        tot += (y - mean_y) * (y - mean_y);
    }
    assert!((r2(&series).unwrap() - (1.0 - sq / tot)).abs() <= 1e-12);

    let constant =
        ForecastSeries::from_parts(mus.iter().map(|_| gp(mean_y, 0.05).into()).collect(), &ys)
            .unwrap();
    assert!(r2(&constant).unwrap().abs() < 1e-12);
}

#[test]
fn mixture_nll_matches_direct_density() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..50 {
        let parts: Vec<(f64, f64, f64)> = (0..3)
            .map(|_| {
                (
                    rng.random_range(0.1..1.0),
                    rng.random_range(0.0..2.0),
                    rng.random_range(0.05..0.5),
                )
            })
            .collect();
        let m = mixture(&parts);
        let y: f64 = rng.random_range(0.0..2.0);
        let total = m_total(&parts);
        // Density as the derivative of the mixture CDF.
        let cdf = |x: f64| {
            parts
                .iter()
                .map(|p| p.0 * phi((x - p.1) / p.2))
                .sum::<f64>()
                / total
        };
        let h = 1e-5;
        let density = (cdf(y + h) - cdf(y - h)) / (2.0 * h);
        let s = ForecastSeries::from_parts(vec![m.into()], &[y]).unwrap();
        let got = nll(&s).unwrap().mean;
        assert!(
            (got + density.ln()).abs() < 1e-8 * got.abs().max(1.0),
            "{got} vs {}",
            -density.ln()
        );
    }
}

#[test]
fn single_component_mixture_nll_equals_gaussian_nll() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..100 {
        let (mu, sigma, y) = (
            rng.random_range(-1.0..1.0),
            rng.random_range(0.01..2.0),
            rng.random_range(-2.0..2.0),
        );
        let g = ForecastSeries::from_parts(vec![gp(mu, sigma).into()], &[y]).unwrap();
        let m =
            ForecastSeries::from_parts(vec![mixture(&[(1.0, mu, sigma)]).into()], &[y]).unwrap();
        assert_eq!(nll(&g).unwrap(), nll(&m).unwrap());
    }
}

#[test]
fn self_sampled_observations_are_calibrated() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut forecasts = Vec::new();
    let mut ys = Vec::new();
    for t in 0..1000 {
        if t % 2 == 0 {
            let (mu, sigma) = (rng.random_range(1.0..2.0), rng.random_range(0.01..0.1));
            ys.push(Normal::new(mu, sigma).unwrap().sample(&mut rng));
            forecasts.push(gp(mu, sigma).into());
        } else {
            let parts = [
                (0.4, rng.random_range(1.0..1.5), 0.05),
                (0.6, rng.random_range(1.5..2.0), 0.08),
            ];
            let (_, mu, sigma) = if rng.random::<f64>() < 0.4 {
                parts[0]
            } else {
                parts[1]
            };
            ys.push(Normal::new(mu, sigma).unwrap().sample(&mut rng));
            forecasts.push(mixture(&parts).into());
        }
    }
    let series = ForecastSeries::from_parts(forecasts, &ys).unwrap();
    let (report, curve) = evaluate(&series, &default_levels()).unwrap();
    assert_eq!(curve.len(), 99);
    assert!(
        report.miscalibration_area < 0.05,
        "area {}",
        report.miscalibration_area
    );
    for v in [
        report.mse,
        report.r2,
        report.nll,
        report.nll_sum,
        report.crps,
        report.sharpness,
    ] {
        assert!(v.is_finite());
    }
}

#[test]
fn report_files_round_trip() {
    let series = ForecastSeries::from_parts(
        (0..25).map(|i| gp(i as f64 * 0.1, 0.2).into()).collect(),
        &(0..25).map(|i| i as f64 * 0.1 + 0.05).collect::<Vec<_>>(),
    )
    .unwrap();
    let (report, curve) = evaluate(&series, &default_levels()).unwrap();
    let json = serde_json::to_string(&report).unwrap();
    assert_eq!(
        serde_json::from_str::<EvaluationReport>(&json).unwrap(),
        report
    );
    assert_eq!(report.csv_row().len(), REPORT_COLUMNS.len());
    assert_eq!(&REPORT_COLUMNS[..4], &["mse", "r2", "nll", "crps"]);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cal.csv");
    write_calibration_csv(&path, &curve).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("p,observed\n"));
    assert_eq!(text.lines().count(), 100);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn crps_scales_and_calibration_is_invariant_under_affine_maps(
        seed in 0u64..1000,
        scale in 0.25f64..4.0,
        shift in -3.0f64..3.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base: Vec<(f64, f64, f64)> = (0..40)
            .map(|_| {
                let mu = rng.random_range(0.0..1.0);
                let sigma = rng.random_range(0.05..0.3);
                (mu, sigma, mu + sigma * rng.random_range(-2.0..2.0))
            })
            .collect();
        let build = |a: f64, b: f64| {
            ForecastSeries::from_parts(
                base.iter().map(|&(m, s, _)| gp(a * m + b, a * s).into()).collect(),
                &base.iter().map(|&(_, _, y)| a * y + b).collect::<Vec<_>>(),
            )
            .unwrap()
        };
        let (plain, mapped) = (build(1.0, 0.0), build(scale, shift));
        let (c0, c1) = (crps(&plain).unwrap(), crps(&mapped).unwrap());
        prop_assert!((c1 - scale * c0).abs() <= 1e-9 * c1.max(1e-12));
        let a0 = miscalibration_area(&calibration_curve(&plain, &default_levels()).unwrap());
        let a1 = miscalibration_area(&calibration_curve(&mapped, &default_levels()).unwrap());
        prop_assert!((a0 - a1).abs() < 1e-12, "{} vs {}", a0, a1);
    }

    #[test]
    fn report_fields_are_finite_and_in_range(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let forecasts: Vec<Forecast> = (0..30)
            .map(|i| {
                if i % 3 == 0 {
                    mixture(&[(0.5, rng.random_range(1.0..2.0), 0.1), (0.5, rng.random_range(1.0..2.0), 0.2)]).into()
                } else {
                    gp(rng.random_range(1.0..2.0), rng.random_range(0.01..0.5)).into()
                }
            })
            .collect();
        let ys: Vec<f64> = (0..30).map(|_| rng.random_range(1.0..2.0)).collect();
        let (r, _) = evaluate(&ForecastSeries::from_parts(forecasts, &ys).unwrap(), &default_levels()).unwrap();
        prop_assert!(r.mse >= 0.0 && r.crps >= 0.0 && r.sharpness >= 0.0 && r.r2 <= 1.0);
        prop_assert!((0.0..=0.5).contains(&r.miscalibration_area));
        prop_assert!(r.nll.is_finite() && r.nll_sum.is_finite());
    }
}
