//! Limit contrasts, optimal parameters, Fisher-type matrices and optimal
//! model indices, by quadrature against the stationary distribution.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CandidateSet, CoefficientFunction, ParameterDomain, SamplingScheme};
use crate::noise::RngStream;
use crate::optim::{maximize, OptimOptions};
use crate::quadrature::{gaussian_expectation_rule, integrate_real_line, Rule};
use crate::simulate::{euler_path_with_burn_in, TrueModel};

/// Gauss–Hermite nodes for Gaussian stationary laws.
pub const HERMITE_NODES: usize = 201;
/// Two optimal values closer than this are treated as tied.
pub const TIE_TOLERANCE: f64 = 1e-6;
/// Minimum averaging horizon of an empirical stationary law.
pub const MIN_EMPIRICAL_HORIZON: f64 = 1000.0;

pub type DensityFn = dyn Fn(f64) -> f64 + Send + Sync;

/// The invariant law `π₀` used for the limit integrals.
#[derive(Clone)]
pub enum StationaryDistribution {
    /// Fixed rule: Gauss–Hermite for Gaussian laws, equal weights for an
    /// ergodic path average.
    Discrete { rule: Rule, kind: &'static str },
    /// General density integrated adaptively over the real line.
    Density { density: Arc<DensityFn>, tol: f64 },
}

impl fmt::Debug for StationaryDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Discrete { rule, kind } => write!(f, "StationaryDistribution::{kind}({} points)", rule.len()),
            Self::Density { tol, .. } => write!(f, "StationaryDistribution::Density(tol = {tol})"),
        }
    }
}

impl StationaryDistribution {
    pub fn standard_normal() -> Self {
        Self::gaussian(0.0, 1.0, HERMITE_NODES).expect("valid rule")
    }

    pub fn gaussian(mean: f64, sd: f64, nodes: usize) -> Result<Self> {
        if !(sd > 0.0 && sd.is_finite() && mean.is_finite()) {
            return Err(Error::invalid(format!("N({mean}, {sd}²) is not a valid law")));
        }
        Ok(Self::Discrete { rule: gaussian_expectation_rule(nodes, mean, sd)?, kind: "Gaussian" })
    }

    /// A closed-form density; must integrate to 1 within 1e-8.
    pub fn from_density<F>(density: F) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let tol = 1e-10;
        let mass = integrate_real_line(&density, tol)?;
        if (mass - 1.0).abs() > 1e-8 {
            return Err(Error::invalid(format!("density integrates to {mass}")));
        }
        Ok(Self::Density { density: Arc::new(density), tol })
    }

    /// Equal-weight average over the sample values at times `≥ burn_in`.
    pub fn empirical(values: &[f64], h: f64, burn_in: f64) -> Result<Self> {
        let skip = (burn_in / h).round() as usize;
        if skip >= values.len() {
            return Err(Error::invalid("burn-in covers the whole path"));
        }
        let kept = &values[skip..];
        let horizon = h * (kept.len() - 1) as f64;
        if horizon < MIN_EMPIRICAL_HORIZON {
            return Err(Error::invalid(format!(
                "empirical law needs at least {MIN_EMPIRICAL_HORIZON} time units after burn-in, got {horizon}"
            )));
        }
        let w = 1.0 / kept.len() as f64;
        Ok(Self::Discrete { rule: Rule { nodes: kept.to_vec(), weights: vec![w; kept.len()] }, kind: "Empirical" })
    }

    /// Simulates one long path of `truth` and averages over it.
    pub fn simulate(truth: &TrueModel, recipe: &EmpiricalRecipe) -> Result<Self> {
        let scheme = SamplingScheme::from_horizon(recipe.h, recipe.horizon)?;
        let path = euler_path_with_burn_in(truth, &scheme, recipe.refine, recipe.burn_in, &RngStream::new(recipe.seed, recipe.stream))?;
        Self::empirical(path.values(), recipe.h, 0.0)
    }

    pub fn expect<F: Fn(f64) -> f64>(&self, f: F) -> Result<f64> {
        match self {
            Self::Discrete { rule, .. } => {
                let v = rule.apply(&f);
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::Numeric { message: "integrand is not finite on the quadrature grid".into(), residual: v })
                }
            }
            Self::Density { density, tol } => integrate_real_line(|x| f(x) * density(x), *tol),
        }
    }

    /// Component-wise expectation of a vector-valued integrand of length `len`.
    pub fn expect_vec<F: Fn(f64, &mut [f64])>(&self, len: usize, f: F) -> Result<Vec<f64>> {
        match self {
            Self::Discrete { rule, .. } => {
                let mut acc = vec![0.0; len];
                let mut buf = vec![0.0; len];
                for (x, w) in rule.nodes.iter().zip(&rule.weights) {
                    buf.iter_mut().for_each(|v| *v = 0.0);
                    f(*x, &mut buf);
                    for (a, b) in acc.iter_mut().zip(&buf) {
                        *a += w * b;
                    }
                }
                if acc.iter().all(|v| v.is_finite()) {
                    Ok(acc)
                } else {
                    Err(Error::Numeric { message: "integrand is not finite on the quadrature grid".into(), residual: f64::NAN })
                }
            }
            Self::Density { .. } => (0..len)
                .map(|k| {
                    self.expect(|x| {
                        let mut buf = vec![0.0; len];
                        f(x, &mut buf);
                        buf[k]
                    })
                })
                .collect(),
        }
    }
}

/// Settings of a simulated stationary law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalRecipe {
    pub horizon: f64,
    pub burn_in: f64,
    pub h: f64,
    pub refine: usize,
    pub seed: u64,
    pub stream: u64,
}

impl Default for EmpiricalRecipe {
    fn default() -> Self {
        Self { horizon: 5000.0, burn_in: 100.0, h: 0.05, refine: 10, seed: 20_190_417, stream: 0 }
    }
}

fn scale_sq(scale: &CoefficientFunction, x: f64, gamma: &[f64]) -> Result<f64> {
    let c = scale.evaluate(x, gamma);
    let c2 = c * c;
    if !(c2.is_finite() && c2 > crate::gql::SCALE_FLOOR) {
        return Err(Error::DegenerateScale { index: 0 });
    }
    Ok(c2)
}

/// `G₁(γ) = -∫ [log c²(x, γ) + C²(x)/c²(x, γ)] π₀(dx)`.
pub fn limit_scale_contrast(
    scale: &CoefficientFunction,
    gamma: &[f64],
    true_scale: &dyn Fn(f64) -> f64,
    pi0: &StationaryDistribution,
) -> Result<f64> {
    let v = pi0.expect(|x| {
        let l2 = 2.0 * scale.log_abs(x, gamma);
        let big = true_scale(x);
        l2 + big * big * (-l2).exp()
    })?;
    if !v.is_finite() {
        return Err(Error::Numeric { message: format!("{}: G₁ is not finite at {gamma:?}", scale.name()), residual: v });
    }
    Ok(-v)
}

/// `G₂(α) = -∫ c⁻²(x, γ*) (A(x) - a(x, α))² π₀(dx)`.
pub fn limit_drift_contrast(
    drift: &CoefficientFunction,
    alpha: &[f64],
    scale: &CoefficientFunction,
    gamma_star: &[f64],
    true_drift: &dyn Fn(f64) -> f64,
    pi0: &StationaryDistribution,
) -> Result<f64> {
    let v = pi0.expect(|x| {
        let r = true_drift(x) - drift.evaluate(x, alpha);
        let l2 = 2.0 * scale.log_abs(x, gamma_star);
        r * r * (-l2).exp()
    })?;
    if !v.is_finite() {
        return Err(Error::Numeric { message: format!("{}: G₂ is not finite at {alpha:?}", drift.name()), residual: v });
    }
    Ok(-v)
}

/// Optimal parameter and value of a limit contrast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitOptimum {
    pub theta_star: Vec<f64>,
    pub value: f64,
    pub boundary_contact: bool,
}

pub fn optimize_limit<F>(contrast: F, domain: &ParameterDomain, opts: &OptimOptions) -> Result<LimitOptimum>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if domain.dim() == 0 {
        let mut contrast = contrast;
        let value = contrast(&[])?;
        return Ok(LimitOptimum { theta_star: vec![], value, boundary_contact: false });
    }
    let out = maximize(contrast, domain, opts)?;
    Ok(LimitOptimum { theta_star: out.argmax, value: out.value, boundary_contact: out.boundary_contact })
}

/// `ℐ_γ = 4∫ c'c'ᵀ C²/c⁴ dπ₀ - 2∫ (c''c - c'c'ᵀ)(C² - c²)/c⁴ dπ₀`, the
/// negative Hessian of `G₁` at `γ*`.
pub fn fisher_scale(
    scale: &CoefficientFunction,
    gamma_star: &[f64],
    true_scale: &dyn Fn(f64) -> f64,
    pi0: &StationaryDistribution,
) -> Result<DMatrix<f64>> {
    let p = gamma_star.len();
    let flat = pi0.expect_vec(p * p, |x, out| {
        let Ok(c2) = scale_sq(scale, x, gamma_star) else {
            out.iter_mut().for_each(|v| *v = f64::NAN);
            return;
        };
        let c = scale.evaluate(x, gamma_star);
        let dc = scale.gradient(x, gamma_star);
        let ddc = scale.hessian(x, gamma_star);
        let big = true_scale(x);
        let big2 = big * big;
        let c4 = c2 * c2;
        for a in 0..p {
            for b in 0..p {
                let outer = dc[a] * dc[b];
                out[a * p + b] = 4.0 * outer * big2 / c4 - 2.0 * (ddc[a * p + b] * c - outer) * (big2 - c2) / c4;
            }
        }
    })?;
    Ok(symmetrize(DMatrix::from_row_slice(p, p, &flat)))
}

/// `ℐ_α = 2∫ a'a'ᵀ/c² dπ₀ - 2∫ a''(A - a)/c² dπ₀` at `(α*, γ*)`.
pub fn fisher_drift(
    drift: &CoefficientFunction,
    alpha_star: &[f64],
    scale: &CoefficientFunction,
    gamma_star: &[f64],
    true_drift: &dyn Fn(f64) -> f64,
    pi0: &StationaryDistribution,
) -> Result<DMatrix<f64>> {
    let p = alpha_star.len();
    let flat = pi0.expect_vec(p * p, |x, out| {
        let Ok(c2) = scale_sq(scale, x, gamma_star) else {
            out.iter_mut().for_each(|v| *v = f64::NAN);
            return;
        };
        let da = drift.gradient(x, alpha_star);
        let dda = drift.hessian(x, alpha_star);
        let r = true_drift(x) - drift.evaluate(x, alpha_star);
        for a in 0..p {
            for b in 0..p {
                out[a * p + b] = 2.0 * (da[a] * da[b] - dda[a * p + b] * r) / c2;
            }
        }
    })?;
    Ok(symmetrize(DMatrix::from_row_slice(p, p, &flat)))
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Smallest eigenvalue is positive. Empty matrices count as positive definite.
pub fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    if m.nrows() == 0 {
        return true;
    }
    m.clone().symmetric_eigen().eigenvalues.iter().all(|v| *v > 0.0)
}

/// Indices whose value is within `TIE_TOLERANCE` of the maximum, and the
/// member chosen by smallest dimension, then smallest index.
pub fn optimal_set(values: &[f64], dims: &[usize]) -> Option<(Vec<usize>, usize)> {
    let best = values.iter().copied().filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max);
    if !best.is_finite() {
        return None;
    }
    let set: Vec<usize> = (0..values.len()).filter(|&i| values[i] >= best - TIE_TOLERANCE).collect();
    let pick = *set.iter().min_by_key(|&&i| (dims[i], i)).expect("non-empty");
    Some((set, pick))
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Population-level optimum of a candidate set. Indices are 0-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitReport {
    pub scale_labels: Vec<String>,
    pub drift_labels: Vec<String>,
    pub g1_star: Vec<f64>,
    pub gamma_star: Vec<Vec<f64>>,
    /// Drift optima conditional on `(c_{m₁*}, γ*_{m₁*})`.
    pub g2_star: Vec<f64>,
    pub alpha_star: Vec<Vec<f64>>,
    pub optimal_scales: Vec<usize>,
    pub optimal_drifts: Vec<usize>,
    pub m1_star: usize,
    pub m2_star: usize,
    pub fisher_gamma: Vec<Vec<Vec<f64>>>,
    pub fisher_alpha: Vec<Vec<Vec<f64>>>,
    pub pd_gamma: Vec<bool>,
    pub pd_alpha: Vec<bool>,
}

impl LimitReport {
    /// Both Fisher matrices of the optimal model are positive definite.
    pub fn optimal_model_is_regular(&self) -> bool {
        self.pd_gamma[self.m1_star] && self.pd_alpha[self.m2_star]
    }
}

/// Optimal parameters of every candidate and the optimal model `(m₁*, m₂*)`.
pub fn optimal_model(
    candidates: &CandidateSet,
    truth: &TrueModel,
    pi0: &StationaryDistribution,
    opts: &OptimOptions,
) -> Result<LimitReport> {
    let big_c = |x: f64| truth.scale_at(x);
    let big_a = |x: f64| truth.drift_at(x);

    let mut g1_star = Vec::new();
    let mut gamma_star = Vec::new();
    let mut fisher_gamma = Vec::new();
    let mut pd_gamma = Vec::new();
    for c in &candidates.scales {
        let opt = optimize_limit(|g| limit_scale_contrast(&c.function, g, &big_c, pi0), &c.domain, opts)?;
        let fisher = fisher_scale(&c.function, &opt.theta_star, &big_c, pi0)?;
        pd_gamma.push(is_positive_definite(&fisher));
        fisher_gamma.push(to_rows(&fisher));
        g1_star.push(opt.value);
        gamma_star.push(opt.theta_star);
    }
    let scale_dims: Vec<usize> = candidates.scales.iter().map(|c| c.dim()).collect();
    let (optimal_scales, m1_star) =
        optimal_set(&g1_star, &scale_dims).ok_or_else(|| Error::OptimizationFailure("no finite scale optimum".into()))?;
    let best_scale = &candidates.scales[m1_star].function;
    let best_gamma = &gamma_star[m1_star];

    let mut g2_star = Vec::new();
    let mut alpha_star = Vec::new();
    let mut fisher_alpha = Vec::new();
    let mut pd_alpha = Vec::new();
    for d in &candidates.drifts {
        let opt = optimize_limit(
            |a| limit_drift_contrast(&d.function, a, best_scale, best_gamma, &big_a, pi0),
            &d.domain,
            opts,
        )?;
        let fisher = fisher_drift(&d.function, &opt.theta_star, best_scale, best_gamma, &big_a, pi0)?;
        pd_alpha.push(is_positive_definite(&fisher));
        fisher_alpha.push(to_rows(&fisher));
        g2_star.push(opt.value);
        alpha_star.push(opt.theta_star);
    }
    let drift_dims: Vec<usize> = candidates.drifts.iter().map(|c| c.dim()).collect();
    let (optimal_drifts, m2_star) =
        optimal_set(&g2_star, &drift_dims).ok_or_else(|| Error::OptimizationFailure("no finite drift optimum".into()))?;

    Ok(LimitReport {
        scale_labels: candidates.scale_labels(),
        drift_labels: candidates.drift_labels(),
        g1_star,
        gamma_star,
        g2_star,
        alpha_star,
        optimal_scales,
        optimal_drifts,
        m1_star,
        m2_star,
        fisher_gamma,
        fisher_alpha,
        pd_gamma,
        pd_alpha,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LinearBasis;

    fn constant_scale() -> CoefficientFunction {
        CoefficientFunction::new("const", 1, |_, g| g[0])
            .with_gradient(|_, _, out| out[0] = 1.0)
            .with_hessian(|_, _, out| out[0] = 0.0)
    }

    #[test]
    fn constant_scale_limit() {
        let pi0 = StationaryDistribution::standard_normal();
        let one = |_: f64| 1.0;
        let v = limit_scale_contrast(&constant_scale(), &[1.0], &one, &pi0).unwrap();
        assert!((v + 1.0).abs() < 1e-14);
        let g = 1.6;
        let v = limit_scale_contrast(&constant_scale(), &[g], &one, &pi0).unwrap();
        assert!((v + (g * g).ln() + 1.0 / (g * g)).abs() < 1e-13);

        let dom = ParameterDomain::new(vec![0.1], vec![5.0]).unwrap();
        let opt = optimize_limit(|t| limit_scale_contrast(&constant_scale(), t, &one, &pi0), &dom, &OptimOptions::default()).unwrap();
        assert!((opt.theta_star[0] - 1.0).abs() < 1e-6);
        assert!((opt.value + 1.0).abs() < 1e-12);

        let f = fisher_scale(&constant_scale(), &[1.0], &one, &pi0).unwrap();
        assert!((f[(0, 0)] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn drift_fisher_examples() {
        let pi0 = StationaryDistribution::standard_normal();
        let unit = CoefficientFunction::new("one", 0, |_, _| 1.0);
        let ou = CoefficientFunction::linear("-ax", LinearBasis::new(vec![Arc::new(|x| -x)], None));
        let a = |x: f64| -0.5 * x;
        let f = fisher_drift(&ou, &[0.5], &unit, &[], &a, &pi0).unwrap();
        assert!((f[(0, 0)] - 2.0).abs() < 1e-12);
        let v = limit_drift_contrast(&ou, &[0.5], &unit, &[], &a, &pi0).unwrap();
        assert!(v.abs() < 1e-15);
        let mean = CoefficientFunction::linear("a", LinearBasis::new(vec![Arc::new(|_| 1.0)], None));
        let f = fisher_drift(&mean, &[0.0], &unit, &[], &a, &pi0).unwrap();
        assert!((f[(0, 0)] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn density_and_gaussian_agree() {
        let d = StationaryDistribution::from_density(|x| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()).unwrap();
        let g = StationaryDistribution::standard_normal();
        let f = |x: f64| (1.0 + x * x).ln();
        assert!((d.expect(f).unwrap() - g.expect(f).unwrap()).abs() < 1e-8);
        assert!(StationaryDistribution::from_density(|x| (-x * x).exp()).is_err());
    }

    #[test]
    fn empirical_needs_long_path() {
        assert!(StationaryDistribution::empirical(&vec![0.0; 1000], 0.01, 0.0).is_err());
        assert!(StationaryDistribution::empirical(&vec![0.0; 200_001], 0.01, 1000.0).is_ok());
        assert!(StationaryDistribution::empirical(&[0.0; 10], 0.01, 1.0).is_err());
    }

    #[test]
    fn optimal_set_ties() {
        let (set, pick) = optimal_set(&[-1.0, -1.0 - 5e-7, -2.0], &[2, 1, 1]).unwrap();
        assert_eq!(set, vec![0, 1]);
        assert_eq!(pick, 1);
        assert!(optimal_set(&[f64::NEG_INFINITY], &[1]).is_none());
    }

    #[test]
    fn positive_definiteness() {
        assert!(is_positive_definite(&DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0])));
        assert!(!is_positive_definite(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])));
    }
}
