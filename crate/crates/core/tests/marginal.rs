use nalgebra::DMatrix;
use sde_qbic::gql::{drift_contrast, fit_scale, FitOptions, Observations};
use sde_qbic::marginal::{
    expansion_prediction_drift, expansion_prediction_scale, log_marginal_drift, log_marginal_scale, rows_to_matrix,
    PriorDensity,
};
use sde_qbic::model::{CoefficientFunction, ParameterDomain, Path, SamplingScheme};
use sde_qbic::registry;
use sde_qbic::simulate::exact_ou_path;
use sde_qbic::RngStream;

fn ou(n: usize, h: f64, seed: u64, stream: u64) -> Path {
    let scheme = SamplingScheme::new(n, h).unwrap();
    exact_ou_path(0.5, 1.0, &scheme, 0.0, &RngStream::new(seed, stream)).unwrap()
}

fn constant_scale() -> CoefficientFunction {
    CoefficientFunction::new("gamma", 1, |_, g| g[0])
        .with_gradient(|_, _, out| out[0] = 1.0)
        .with_hessian(|_, _, out| out[0] = 0.0)
}

#[test]
fn linear_drift_marginal_is_a_gaussian_integral() {
    let drift = registry::candidate("drift2").unwrap();
    let scale = registry::candidate("scale1").unwrap();
    let gamma = [-0.2, 0.1];
    for seed in 0..5 {
        let p = ou(1000, 0.01, seed, 3);
        let prior = PriorDensity::uniform(drift.domain.clone()).unwrap();
        let mv = log_marginal_drift(&p, &drift.function, &drift.domain, &prior, &scale.function, &gamma, &FitOptions::default())
            .unwrap();
        // 𝔾₂(α) = 𝔾₂(α̂) - S (α - α̂)², S = Σ w h² x²
        let obs = Observations::new(&p);
        let w = obs.drift_weights(&scale.function, &gamma).unwrap();
        let s: f64 = obs.left_points().iter().zip(&w).map(|(x, w)| w * 0.01 * 0.01 * x * x).sum();
        let a = mv.theta_hat[0];
        let g = drift_contrast(&p, &drift.function, &[a], &scale.function, &gamma).unwrap();
        // the box edges sit beyond 6 standard deviations, so the Gaussian tails are below 1e-16
        assert!(s.sqrt() * (10.0 - a.abs()) > 6.0);
        let mass = (std::f64::consts::PI / s).sqrt();
        let oracle = g + (mass / 20.0).ln();
        assert!((mv.log_marginal - oracle).abs() < 1e-8, "seed {seed}: {} vs {oracle}", mv.log_marginal);
    }
}

#[test]
fn prior_away_from_the_estimate_loses_mass() {
    let p = ou(2000, 0.01, 4, 5);
    let support = ParameterDomain::new(vec![2.0], vec![3.0]).unwrap();
    let prior = PriorDensity::uniform(support.clone()).unwrap();
    let mv = log_marginal_scale(&p, &constant_scale(), &support, &prior, &FitOptions::default()).unwrap();
    let wide = ParameterDomain::new(vec![0.5], vec![2.0]).unwrap();
    let fit = fit_scale(&p, &constant_scale(), &wide, &FitOptions::default()).unwrap();
    let fisher = DMatrix::from_element(1, 1, 4.0);
    let prediction = expansion_prediction_scale(fit.g1, 1, 2000, 1.0, &fisher).unwrap();
    assert!(mv.log_marginal < prediction - 10.0, "{} vs {prediction}", mv.log_marginal);
}

#[test]
fn narrow_prior_concentrates_on_its_centre() {
    let drift = registry::candidate("drift1").unwrap();
    let scale = registry::candidate("scale1").unwrap();
    let p = ou(1000, 0.01, 6, 5);
    let gamma = [0.0, 0.0];
    let a0 = 0.3;
    let support = ParameterDomain::new(vec![a0 - 1e-5], vec![a0 + 1e-5]).unwrap();
    let prior = PriorDensity::uniform(support.clone()).unwrap();
    let mv = log_marginal_drift(&p, &drift.function, &support, &prior, &scale.function, &gamma, &FitOptions::default()).unwrap();
    let at = drift_contrast(&p, &drift.function, &[a0], &scale.function, &gamma).unwrap();
    assert!((mv.log_marginal - at).abs() < 1e-3, "{} vs {at}", mv.log_marginal);
}

// The expansion is exact up to o(1); the quadrature gap should shrink with n.
#[test]
fn scale_expansion_gap_shrinks_with_sample_size() {
    let support = ParameterDomain::new(vec![0.5], vec![2.0]).unwrap();
    let prior = PriorDensity::uniform(support.clone()).unwrap();
    let fisher = DMatrix::from_element(1, 1, 4.0);
    let gap = |n: usize, r: u64| {
        let p = ou(n, 0.01, r, 21);
        let mv = log_marginal_scale(&p, &constant_scale(), &support, &prior, &FitOptions::default()).unwrap();
        let pred = expansion_prediction_scale(mv.contrast_at_max, 1, n, prior.density(&mv.theta_hat), &fisher).unwrap();
        (mv.log_marginal - pred).abs()
    };
    let wins = (0..100).filter(|&r| gap(10_000, r) < gap(1000, r)).count();
    assert!(wins >= 80, "{wins} of 100");
}

#[test]
fn drift_expansion_gap_shrinks_with_horizon() {
    let drift = registry::candidate("levy-drift2").unwrap();
    let prior = PriorDensity::uniform(drift.domain.clone()).unwrap();
    let one = CoefficientFunction::new("one", 0, |_, _| 1.0);
    let gaps = |horizon: f64| -> Vec<f64> {
        (0..40)
            .map(|r| {
                let p = ou((horizon / 0.01).round() as usize, 0.01, r, 31);
                let mv =
                    log_marginal_drift(&p, &drift.function, &drift.domain, &prior, &one, &[], &FitOptions::default()).unwrap();
                // a ≡ A: ℐ_α = 2∫x² dπ₀ = 2
                let fisher = DMatrix::from_element(1, 1, 2.0);
                let pred = expansion_prediction_drift(mv.contrast_at_max, 1, horizon, prior.density(&mv.theta_hat), &fisher).unwrap();
                (mv.log_marginal - pred).abs()
            })
            .collect()
    };
    let median = |mut v: Vec<f64>| {
        v.sort_by(f64::total_cmp);
        0.5 * (v[19] + v[20])
    };
    let (short, long) = (median(gaps(10.0)), median(gaps(50.0)));
    assert!(long < short, "{long} vs {short}");
}

#[test]
fn data_fisher_is_reported_per_unit_rate() {
    let p = ou(5000, 0.01, 8, 1);
    let support = ParameterDomain::new(vec![0.5], vec![2.0]).unwrap();
    let prior = PriorDensity::uniform(support.clone()).unwrap();
    let mv = log_marginal_scale(&p, &constant_scale(), &support, &prior, &FitOptions::default()).unwrap();
    let f = rows_to_matrix(&mv.data_fisher);
    let g = mv.theta_hat[0];
    // -(1/n) ∂² [-n log γ² - Q/(hγ²)] at the maximizer equals 4/γ̂²
    assert!((f[(0, 0)] - 4.0 / (g * g)).abs() < 1e-4, "{} vs {}", f[(0, 0)], 4.0 / (g * g));
}
