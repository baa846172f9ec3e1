use oded_core::evaluation::{generate_realizations, RealizationMode};
use oded_core::*;
use rand::SeedableRng;

#[test]
fn simulated_residuals_have_the_noise_moments() {
    let spec = GrowthModelSpec::dry_matter(ModelKind::Gompertz, 0);
    let sigma = 0.02;
    let params = ParamVector::from_natural(
        ModelKind::Gompertz,
        &[(ParamName::LogR, 0.15), (ParamName::LogLambda, 0.3), (ParamName::LogSigmaE, sigma)],
    )
    .unwrap();
    let effects = EffectsVector::zeros(&spec);
    let times: Vec<f64> = (0..1000).map(|i| 30.0 * i as f64 / 999.0).collect();
    let design = TimeDesign::destructive(times, 30.0).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let mut resid = Vec::with_capacity(100_000);
    for _ in 0..100 {
        let data = simulate_dataset(&spec, &design, &params, &effects, &mut rng).unwrap();
        for row in &data.rows {
            resid.push(row.y - mean_response(&spec, &params, &effects, row.time, None).unwrap());
        }
    }
    let n = resid.len() as f64;
    let mean = resid.iter().sum::<f64>() / n;
    let var = resid.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!(mean.abs() <= 3.0 * sigma / n.sqrt(), "mean {mean}");
    assert!((var / (sigma * sigma) - 1.0).abs() <= 0.05, "variance {var}");
}

#[test]
fn repeated_measures_rows_follow_fruit_count() {
    let spec = GrowthModelSpec::fruit_weight(ModelKind::DoubleGompertz, 0, 0, 5);
    let prior = PriorSpec::fruit_weight(ModelKind::DoubleGompertz, 10.0, 10.0);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let draw = sample_prior(&prior, &spec, &mut rng).unwrap();
    let times: Vec<f64> = (0..12).map(|i| 25.0 * i as f64).collect();
    let design = TimeDesign::repeated(times, 350.0, 5).unwrap();
    let data = simulate_dataset(&spec, &design, &draw.params, &draw.effects, &mut rng).unwrap();
    assert_eq!(data.len(), 60);
    assert!(data.rows.iter().all(|r| r.y.is_finite() && r.fruit.is_some()));
}

#[test]
fn prior_draws_match_entry_moments() {
    let (spec, prior) = PriorSpec::dry_matter_preset(ModelKind::FlexGompertz, Flexibility::Medium);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(10);
    let n = 100_000;
    let dim = prior.entries.len();
    let mut sum = vec![0.0; dim];
    let mut sq = vec![0.0; dim];
    for _ in 0..n {
        let d = sample_prior(&prior, &spec, &mut rng).unwrap();
        for (i, v) in d.params.values().iter().enumerate() {
            sum[i] += v;
            sq[i] += v * v;
        }
    }
    let aligned = prior.aligned(&spec).unwrap();
    for (i, e) in aligned.iter().enumerate() {
        let m = sum[i] / n as f64;
        let sd = (sq[i] / n as f64 - m * m).sqrt();
        assert!((m - e.mean).abs() <= 3.0 * e.sd / (n as f64).sqrt(), "{}: mean {m} vs {}", e.name, e.mean);
        // standard error of a sample SD is about sd / sqrt(2n)
        assert!((sd - e.sd).abs() <= 3.0 * e.sd / (2.0 * n as f64).sqrt(), "{}: sd {sd} vs {}", e.name, e.sd);
    }
}

#[test]
fn prior_moments_are_diagonal_with_entry_sds() {
    let (spec, prior) = PriorSpec::dry_matter_preset(ModelKind::FlexGompertz, Flexibility::High);
    let g = prior_moments(&prior, &spec).unwrap();
    let chol = g.cholesky().unwrap();
    let l = chol.l();
    let aligned = prior.aligned(&spec).unwrap();
    let sds: Vec<f64> = aligned.iter().map(|e| e.sd).chain(prior.effect_sds(&spec)).collect();
    for i in 0..g.dim() {
        assert!((l[(i, i)] - sds[i]).abs() <= 1e-12);
        for j in 0..g.dim() {
            if i != j {
                assert_eq!(g.cov()[(i, j)], 0.0);
            }
        }
    }
}

fn mid_horizon_sd(level: Flexibility, curves: usize) -> f64 {
    let (spec, prior) = PriorSpec::dry_matter_preset(ModelKind::FlexGompertz, level);
    let model = GrowthModel::new(spec, prior).unwrap();
    let rows = generate_realizations(&model, curves, &[15.0], RealizationMode::FixFixedEffects, 6).unwrap();
    let ys: Vec<f64> = rows.iter().map(|r| r.y).collect();
    let m = ys.iter().sum::<f64>() / ys.len() as f64;
    (ys.iter().map(|y| (y - m).powi(2)).sum::<f64>() / (ys.len() as f64 - 1.0)).sqrt()
}

#[test]
fn high_flexibility_realizations_spread_out() {
    let high = mid_horizon_sd(Flexibility::High, 100);
    let low = mid_horizon_sd(Flexibility::VeryLow, 100);
    assert!(high >= 10.0 * low, "high {high} vs very low {low}");
}

#[test]
fn negligible_effect_scale_reproduces_base_curve() {
    let spec = GrowthModelSpec::dry_matter(ModelKind::FlexGompertz, 12);
    let prior = PriorSpec::dry_matter_2021(ModelKind::FlexGompertz, 1e-9);
    let model = GrowthModel::new(spec, prior).unwrap();
    let grid: Vec<f64> = (0..=60).map(|i| i as f64 * 0.5).collect();
    let rows = generate_realizations(&model, 10, &grid, RealizationMode::FixFixedEffects, 2).unwrap();
    assert_eq!(rows.len(), 10 * grid.len());
    let theta = model.theta_prior_mean();
    let zeros = vec![0.0; model.effects_dim()];
    for r in rows {
        assert!((r.y - model.mean(&theta, &zeros, r.t, None)).abs() < 1e-4);
    }
}
