//! Acceptance criteria. Each test prints one `criterion N` line with its
//! verdict and the measured numbers; tolerances are pinned below.
//!
//! The Monte Carlo runs are shared between criteria and computed once per
//! test binary. Set `SDE_QBIC_WORKERS` to use more threads.

use std::fs::{self, File};
use std::io::{BufRead, BufReader};
use std::path::Path as FsPath;
use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::DMatrix;
use sde_qbic::gql::{fit_drift, fit_scale, FitOptions};
use sde_qbic::harness::{
    run_experiment, verify_expansion, AggregateReport, ExpansionStudy, ExpansionTarget, ExperimentConfig,
    ReplicateOutcome, ReplicateRecord, Workers,
};
use sde_qbic::limits::{optimal_model, optimal_set, LimitReport};
use sde_qbic::marginal::{log_marginal, PriorDensity};
use sde_qbic::model::{CoefficientFunction, ParameterDomain, Path, SamplingScheme};
use sde_qbic::noise::{nig_increments, wiener_increments};
use sde_qbic::optim::OptimOptions;
use sde_qbic::registry::{self, DIFFUSION_EXPERIMENT, LEVY_EXPERIMENT};
use sde_qbic::simulate::exact_ou_path;
use sde_qbic::{NoiseSpec, RngStream};

const SCALE_TARGETS: [f64; 7] = [-1.2089, -1.2822, -1.4833, -1.6225, -1.4833, -1.2602, -3.2860];
const DRIFT_TARGETS: [f64; 3] = [-0.0624, -0.8193, -0.0979];
const LIMIT_TOL: f64 = 1e-3;
const SCALE_LIMIT_SECONDS: f64 = 10.0;
const DRIFT_LIMIT_SECONDS: f64 = 5.0;
const TIE_TOL: f64 = 1e-6;

const REPLICATES: usize = 200;
const MC_SEED: u64 = 1;
const DIFFUSION_FREQ: f64 = 0.832;
const DIFFUSION_FREQ_BAND: f64 = 0.08;
const DIFFUSION_WEIGHT: f64 = 62.6;
const DIFFUSION_WEIGHT_BAND: f64 = 6.0;
const TREND_SLACK: f64 = 0.03;
const LEVY_FREQ: f64 = 0.659;
const LEVY_FREQ_FINE: f64 = 0.684;
const LEVY_FREQ_BAND: f64 = 0.09;
const LEVY_DRIFT3_MAX: usize = 2;

const EXPANSION_REPLICATES: usize = 100;
// one-sided binomial(100, ½) tail P(X ≥ 59) = 0.044
const SIGN_TEST_WINS: usize = 59;
const QUADRATIC_TOL: f64 = 1e-6;

const CLOSED_FORM_PATHS: u64 = 50;
const CLOSED_FORM_TOL: f64 = 1e-6;

const NOISE_DRAWS: usize = 1_000_000;
const NOISE_STEP: f64 = 0.01;
const NOISE_SES: f64 = 3.0;

const WEIGHT_TOTAL_TOL: f64 = 1e-9;

fn verdict(criterion: &str, pass: bool, detail: &str) {
    println!("criterion {criterion}: {} {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {criterion} failed: {detail}");
}

fn limits(name: &str) -> &'static (LimitReport, f64) {
    static DIFFUSION: OnceLock<(LimitReport, f64)> = OnceLock::new();
    static LEVY: OnceLock<(LimitReport, f64)> = OnceLock::new();
    let cell = if name == DIFFUSION_EXPERIMENT { &DIFFUSION } else { &LEVY };
    cell.get_or_init(|| {
        let start = Instant::now();
        let exp = registry::experiment(name).unwrap();
        let pi0 = exp.stationary.build(&exp.truth).unwrap();
        let report = optimal_model(&exp.candidates, &exp.truth, &pi0, &OptimOptions::default()).unwrap();
        (report, start.elapsed().as_secs_f64())
    })
}

struct MonteCarlo {
    report: AggregateReport,
    weights: Vec<Vec<Vec<f64>>>,
}

fn journal_weights(dir: &FsPath) -> Vec<Vec<Vec<f64>>> {
    BufReader::new(File::open(dir.join("journal.jsonl")).unwrap())
        .lines()
        .skip(1)
        .filter_map(|l| match serde_json::from_str::<ReplicateRecord>(&l.unwrap()).unwrap().outcome {
            ReplicateOutcome::Selected { weights, .. } => Some(weights),
            ReplicateOutcome::Failed { .. } => None,
        })
        .collect()
}

fn monte_carlo(name: &str, schemes: Vec<(f64, f64)>) -> MonteCarlo {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::named(name);
    cfg.schemes = schemes;
    cfg.replicates = REPLICATES;
    cfg.base_seed = MC_SEED;
    cfg.output_dir = Some(dir.path().to_path_buf());
    let report = run_experiment(&cfg).unwrap();
    MonteCarlo { weights: journal_weights(dir.path()), report }
}

/// Schemes (0.01, 10), (0.01, 50), (0.005, 50).
fn diffusion_mc() -> &'static MonteCarlo {
    static RUN: OnceLock<MonteCarlo> = OnceLock::new();
    RUN.get_or_init(|| monte_carlo(DIFFUSION_EXPERIMENT, vec![(0.01, 10.0), (0.01, 50.0), (0.005, 50.0)]))
}

/// Schemes (0.01, 50), (0.005, 50).
fn levy_mc() -> &'static MonteCarlo {
    static RUN: OnceLock<MonteCarlo> = OnceLock::new();
    RUN.get_or_init(|| monte_carlo(LEVY_EXPERIMENT, vec![(0.01, 50.0), (0.005, 50.0)]))
}

#[test]
fn criterion_01_scale_limit_optima() {
    let (r, secs) = limits(DIFFUSION_EXPERIMENT);
    let misses: Vec<String> = r
        .g1_star
        .iter()
        .zip(&SCALE_TARGETS)
        .enumerate()
        .filter(|(_, (got, want))| (*got - *want).abs() > LIMIT_TOL)
        .map(|(i, (got, want))| format!("scale{} {got:.5} vs {want}", i + 1))
        .collect();
    let pass = misses.is_empty() && *secs < SCALE_LIMIT_SECONDS;
    let detail = format!(
        "{}/7 G1 optima within {LIMIT_TOL:e}; misses [{}]; {secs:.2} s",
        7 - misses.len(),
        misses.join(", ")
    );
    verdict("1 (scale limit optima)", pass, &detail);
}

#[test]
fn criterion_02_drift_limit_optima() {
    let (r, secs) = limits(DIFFUSION_EXPERIMENT);
    let misses: Vec<String> = r
        .g2_star
        .iter()
        .zip(&DRIFT_TARGETS)
        .enumerate()
        .filter(|(_, (got, want))| (*got - *want).abs() > LIMIT_TOL)
        .map(|(j, (got, want))| format!("drift{} {got:.5} vs {want}", j + 1))
        .collect();
    let pass = misses.is_empty() && *secs < DRIFT_LIMIT_SECONDS;
    let detail = format!(
        "{}/3 G2 optima within {LIMIT_TOL:e} under scale1; misses [{}]; {secs:.2} s",
        3 - misses.len(),
        misses.join(", ")
    );
    verdict("2 (drift limit optima)", pass, &detail);
}

#[test]
fn criterion_03_optimal_models() {
    let (d, _) = limits(DIFFUSION_EXPERIMENT);
    let (l, _) = limits(LEVY_EXPERIMENT);
    let tie = (d.g1_star[2] - d.g1_star[4]).abs();
    let (_, pick) = optimal_set(&[d.g1_star[2], d.g1_star[4]], &[2, 1]).unwrap();
    let pass = (d.m1_star, d.m2_star) == (0, 0) && (l.m1_star, l.m2_star) == (2, 1) && tie < TIE_TOL && pick == 1;
    let detail = format!(
        "diffusion ({}, {}); nig ({}, {}); scale3/scale5 gap {tie:.1e} resolved to {}",
        d.scale_labels[d.m1_star],
        d.drift_labels[d.m2_star],
        l.scale_labels[l.m1_star],
        l.drift_labels[l.m2_star],
        if pick == 1 { "scale5" } else { "scale3" }
    );
    verdict("3 (optimal models)", pass, &detail);
}

#[test]
fn criterion_04_diffusion_frequencies() {
    let mc = diffusion_mc();
    let s = &mc.report.schemes;
    let freq = s[1].frequency(0, 0);
    let weight = s[1].mean_weights[0][0];
    let (coarse, fine) = (s[0].frequency(0, 0), s[2].frequency(0, 0));
    let pass = (freq - DIFFUSION_FREQ).abs() <= DIFFUSION_FREQ_BAND
        && (weight - DIFFUSION_WEIGHT).abs() <= DIFFUSION_WEIGHT_BAND
        && fine >= coarse - TREND_SLACK
        && s.iter().all(|a| a.failed == 0);
    let detail = format!(
        "(0.01, 50): freq {:.1}% (target {:.1} ± {:.0}), mean w11 {weight:.1} (target {DIFFUSION_WEIGHT} ± {DIFFUSION_WEIGHT_BAND}); \
         n = 1000 {:.1}% -> n = 10000 {:.1}%",
        100.0 * freq,
        100.0 * DIFFUSION_FREQ,
        100.0 * DIFFUSION_FREQ_BAND,
        100.0 * coarse,
        100.0 * fine
    );
    verdict("4 (diffusion selection frequencies)", pass, &detail);
}

#[test]
fn criterion_05_levy_frequencies() {
    let mc = levy_mc();
    let s = &mc.report.schemes;
    let freq = s[0].frequency(2, 1);
    let fine = s[1].frequency(2, 1);
    let drift3: usize = s[0].counts.iter().map(|row| row[2]).sum();
    let pass = (freq - LEVY_FREQ).abs() <= LEVY_FREQ_BAND
        && (fine - LEVY_FREQ_FINE).abs() <= LEVY_FREQ_BAND
        && drift3 <= LEVY_DRIFT3_MAX
        && s.iter().all(|a| a.failed == 0);
    let detail = format!(
        "(0.01, 50): freq {:.1}% (target {:.1} ± {:.0}), drift3 selected {drift3}x; (0.005, 50): {:.1}% (target {:.1})",
        100.0 * freq,
        100.0 * LEVY_FREQ,
        100.0 * LEVY_FREQ_BAND,
        100.0 * fine,
        100.0 * LEVY_FREQ_FINE
    );
    verdict("5 (NIG selection frequencies)", pass, &detail);
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len().is_multiple_of(2) {
        0.5 * (v[m - 1] + v[m])
    } else {
        v[m]
    }
}

fn expansion_trend(target: ExpansionTarget) -> (usize, f64, f64) {
    let mut study =
        ExpansionStudy::new(DIFFUSION_EXPERIMENT, target, vec![(0.01, 10.0), (0.01, 100.0)], EXPANSION_REPLICATES);
    study.workers = Workers::Auto;
    let records = verify_expansion(&study).unwrap();
    let small: Vec<f64> = records.iter().filter(|r| r.n == 1000).map(|r| r.residual.abs()).collect();
    let large: Vec<f64> = records.iter().filter(|r| r.n == 10_000).map(|r| r.residual.abs()).collect();
    assert_eq!((small.len(), large.len()), (EXPANSION_REPLICATES, EXPANSION_REPLICATES));
    let wins = small.iter().zip(&large).filter(|(s, l)| l < s).count();
    (wins, median(small), median(large))
}

fn quadratic_identity_error() -> f64 {
    let mut worst: f64 = 0.0;
    for (p, n) in [(1usize, 1000.0f64), (2, 5000.0)] {
        let fisher = if p == 1 { DMatrix::from_element(1, 1, 1.7) } else { DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 0.5]) };
        let mode: Vec<f64> = (0..p).map(|k| 0.2 - 0.3 * k as f64).collect();
        let g_hat = -123.4;
        let contrast = |t: &[f64]| {
            let d = DMatrix::from_fn(p, 1, |i, _| t[i] - mode[i]);
            Ok(g_hat - 0.5 * n * (d.transpose() * &fisher * &d)[(0, 0)])
        };
        let prior = PriorDensity::uniform(ParameterDomain::cube(p, -10.0, 10.0).unwrap()).unwrap();
        let hessian = -&fisher * n;
        let value = log_marginal(contrast, &prior, &mode, Some(&hessian)).unwrap();
        let pf = p as f64;
        let exact = g_hat - 0.5 * pf * n.ln() + (1.0 / 20f64.powi(p as i32)).ln() + 0.5 * pf * (2.0 * std::f64::consts::PI).ln()
            - 0.5 * fisher.determinant().ln();
        worst = worst.max((value - exact).abs());
    }
    worst
}

#[test]
fn criterion_06_expansion() {
    let (scale_wins, s_small, s_large) = expansion_trend(ExpansionTarget::Scale(0));
    let (drift_wins, d_small, d_large) = expansion_trend(ExpansionTarget::Drift(0));
    let quad = quadratic_identity_error();
    let pass = scale_wins >= SIGN_TEST_WINS
        && drift_wins >= SIGN_TEST_WINS
        && s_large < s_small
        && d_large < d_small
        && quad < QUADRATIC_TOL;
    let detail = format!(
        "scale1 median |R| {s_small:.4} -> {s_large:.4} ({scale_wins}/100 shrink); \
         drift1 {d_small:.4} -> {d_large:.4} ({drift_wins}/100); need {SIGN_TEST_WINS}; quadratic identity error {quad:.1e}"
    );
    verdict("6 (Laplace expansion)", pass, &detail);
}

fn ou(seed: u64) -> Path {
    let scheme = SamplingScheme::new(2000, 0.01).unwrap();
    exact_ou_path(0.5, 1.0, &scheme, 0.0, &RngStream::new(seed, 77)).unwrap()
}

#[test]
fn criterion_07_closed_form_equivalence() {
    let numeric = FitOptions { closed_form_drift: false, ..FitOptions::default() };
    let gamma = CoefficientFunction::new("gamma", 1, |_, g| g[0]);
    let gamma_box = ParameterDomain::new(vec![1e-3], vec![10.0]).unwrap();
    let one = CoefficientFunction::new("one", 0, |_, _| 1.0);
    let constant = CoefficientFunction::new("alpha", 1, |_, a| a[0]);
    let drift2 = registry::candidate("drift2").unwrap();
    let alpha_box = ParameterDomain::cube(1, -10.0, 10.0).unwrap();
    let h = 0.01;
    let mut worst: f64 = 0.0;
    for seed in 0..CLOSED_FORM_PATHS {
        let p = ou(seed);
        let d = p.increments();
        let x = &p.values()[..d.len()];

        let qv: f64 = d.iter().map(|v| v * v).sum();
        let g_hat = (qv / (d.len() as f64 * h)).sqrt();
        let fit = fit_scale(&p, &gamma, &gamma_box, &numeric).unwrap();
        worst = worst.max((fit.gamma_hat[0] - g_hat).abs());

        let a_hat = (p.values()[d.len()] - p.values()[0]) / p.scheme().horizon();
        let fit = fit_drift(&p, &constant, &alpha_box, &one, &[], &numeric).unwrap();
        worst = worst.max((fit.alpha_hat[0] - a_hat).abs());

        // a = -αx - 1 under c ≡ γ̂: α̂ = -Σ x(Δ + h) / (h Σ x²)
        let num: f64 = x.iter().zip(&d).map(|(x, d)| x * (d + h)).sum();
        let den: f64 = x.iter().map(|x| h * x * x).sum();
        let fit = fit_drift(&p, &drift2.function, &drift2.domain, &gamma, &[g_hat], &numeric).unwrap();
        worst = worst.max((fit.alpha_hat[0] + num / den).abs());
    }
    let pass = worst < CLOSED_FORM_TOL;
    verdict(
        "7 (closed-form equivalence)",
        pass,
        &format!("{CLOSED_FORM_PATHS} paths x 3 estimators, max |numeric - closed form| {worst:.1e}"),
    );
}

fn moment_check(draws: &[f64], h: f64) -> (bool, String) {
    let n = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / n;
    let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let m4 = draws.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
    let mean_se = (h / n).sqrt();
    let var_se = ((m4 - var * var) / n).sqrt();
    let ok = mean.abs() <= NOISE_SES * mean_se && (var - h).abs() <= NOISE_SES * var_se;
    (ok, format!("mean {:+.2} se, var {:+.2} se", mean / mean_se, (var - h) / var_se))
}

#[test]
fn criterion_08_noise_standardization() {
    let scheme = SamplingScheme::new(NOISE_DRAWS, NOISE_STEP).unwrap();
    let nig = nig_increments(&NoiseSpec::standard_nig(), &scheme, &RngStream::new(2024, 1)).unwrap();
    let wiener = wiener_increments(&scheme, &RngStream::new(2024, 2));
    let (nig_ok, nig_detail) = moment_check(&nig, NOISE_STEP);
    let (w_ok, w_detail) = moment_check(&wiener, NOISE_STEP);
    verdict(
        "8 (noise standardization)",
        nig_ok && w_ok,
        &format!("10^6 draws at h = {NOISE_STEP}: NIG {nig_detail}; Wiener {w_detail}; bound {NOISE_SES} se"),
    );
}

#[test]
fn criterion_09_weight_normalization() {
    let mut count = 0;
    let mut worst: f64 = 0.0;
    for mc in [diffusion_mc(), levy_mc()] {
        for w in &mc.weights {
            let total: f64 = w.iter().flatten().sum();
            worst = worst.max((total - 100.0).abs());
            count += 1;
        }
    }
    let expected = REPLICATES * 5;
    verdict(
        "9 (weight normalization)",
        worst <= WEIGHT_TOTAL_TOL && count == expected,
        &format!("{count}/{expected} replicate weight matrices, max |sum - 100| {worst:.1e}"),
    );
}

#[test]
fn criterion_10_determinism() {
    let run = |workers: usize| {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::named(LEVY_EXPERIMENT);
        cfg.schemes = vec![(0.01, 10.0), (0.01, 20.0)];
        cfg.replicates = 6;
        cfg.base_seed = 99;
        cfg.workers = Workers::Count(workers);
        cfg.output_dir = Some(dir.path().to_path_buf());
        run_experiment(&cfg).unwrap();
        ["frequencies.csv", "weights.csv", "aggregate.json"].map(|f| fs::read(dir.path().join(f)).unwrap())
    };
    let a = run(1);
    let b = run(1);
    let c = run(4);
    verdict(
        "10 (determinism)",
        a == b && a == c,
        &format!("repeat run identical: {}; 1 vs 4 workers identical: {}", a == b, a == c),
    );
}
