//! Stepwise Gaussian quasi-likelihood contrasts and their maximizers.
//!
//! `𝔾₁,ₙ(γ) = -Σ [log c²(X_{j-1}, γ) + (Δ_j X)² / (h c²(X_{j-1}, γ))]`
//!
//! `𝔾₂,ₙ(α) = -Σ (Δ_j X - h a(X_{j-1}, α))² / (h c²(X_{j-1}, γ̂))`
//!
//! Per-observation reporting: `𝔾₁,ₙ / n` converges to the limit contrast
//! `G₁`. The drift contrast carries an α-free term of order `n`, so its
//! time-normalized comparison with `G₂` is made on differences,
//! `(𝔾₂,ₙ(α) - 𝔾₂,ₙ(α'))/T_n → G₂(α) - G₂(α')`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Candidate, CoefficientFunction, ModelSpec, ParameterDomain, Path};
use crate::optim::{maximize, maximize_from, start_points, OptimOptions, OptimOutcome};

/// Smallest `c²` accepted before the scale counts as degenerate.
pub const SCALE_FLOOR: f64 = 1e-300;
const LOG_SCALE_FLOOR: f64 = -690.775_527_898_213_7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub optim: OptimOptions,
    /// Solve linear-in-parameter drifts by weighted least squares.
    pub closed_form_drift: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { optim: OptimOptions::default(), closed_form_drift: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// `"nelder-mead"`, `"wls"` or `"wls+projection"`.
    pub method: String,
    pub evaluations: usize,
    pub restarts: usize,
    pub converged: bool,
    pub boundary_contact: bool,
    pub multiplicity: usize,
}

impl FitDiagnostics {
    fn from_outcome(o: &OptimOutcome) -> Self {
        Self {
            method: "nelder-mead".into(),
            evaluations: o.evaluations,
            restarts: o.restarts,
            converged: o.converged,
            boundary_contact: o.boundary_contact,
            multiplicity: o.multiplicity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleFit {
    pub gamma_hat: Vec<f64>,
    pub g1: f64,
    pub diag: FitDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftFit {
    pub alpha_hat: Vec<f64>,
    pub g2: f64,
    pub diag: FitDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnosticsPair {
    pub scale: FitDiagnostics,
    pub drift: FitDiagnostics,
}

/// Stepwise GQMLE of one candidate model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: String,
    pub gamma_hat: Vec<f64>,
    pub alpha_hat: Vec<f64>,
    pub g1: f64,
    pub g2: f64,
    pub diag: FitDiagnosticsPair,
}

/// Left points and increments of a path, shared by every contrast
/// evaluation of one fit.
#[derive(Debug, Clone)]
pub struct Observations {
    x: Vec<f64>,
    d: Vec<f64>,
    h: f64,
}

impl Observations {
    pub fn new(path: &Path) -> Self {
        Self { x: path.left_points().to_vec(), d: path.increments(), h: path.scheme().h() }
    }

    pub fn n(&self) -> usize {
        self.d.len()
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn horizon(&self) -> f64 {
        self.h * self.n() as f64
    }

    pub fn left_points(&self) -> &[f64] {
        &self.x
    }

    pub fn increments(&self) -> &[f64] {
        &self.d
    }

    /// `(log c², 1/c²)` at every left point.
    pub fn scale_terms(&self, scale: &CoefficientFunction, gamma: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut logs = Vec::with_capacity(self.n());
        let mut inv = Vec::with_capacity(self.n());
        for (j, &x) in self.x.iter().enumerate() {
            let (l, i) = scale_term(scale, x, gamma, j)?;
            logs.push(l);
            inv.push(i);
        }
        Ok((logs, inv))
    }

    /// Drift-step weights `1 / (h c²(X_{j-1}, γ))`.
    pub fn drift_weights(&self, scale: &CoefficientFunction, gamma: &[f64]) -> Result<Vec<f64>> {
        let (_, inv) = self.scale_terms(scale, gamma)?;
        Ok(inv.into_iter().map(|w| w / self.h).collect())
    }
}

#[inline]
fn scale_term(scale: &CoefficientFunction, x: f64, gamma: &[f64], index: usize) -> Result<(f64, f64)> {
    if scale.has_log_abs() {
        let l2 = 2.0 * scale.log_abs(x, gamma);
        if !(l2.is_finite() && l2 > LOG_SCALE_FLOOR) {
            return Err(Error::DegenerateScale { index });
        }
        Ok((l2, (-l2).exp()))
    } else {
        let c = scale.evaluate(x, gamma);
        let c2 = c * c;
        if !(c2.is_finite() && c2 > SCALE_FLOOR) {
            return Err(Error::DegenerateScale { index });
        }
        Ok((c2.ln(), 1.0 / c2))
    }
}

fn check_dim(f: &CoefficientFunction, theta: &[f64]) -> Result<()> {
    if f.dim() != theta.len() {
        return Err(Error::invalid(format!("{} takes {} parameters, got {}", f.name(), f.dim(), theta.len())));
    }
    Ok(())
}

pub fn scale_contrast_obs(obs: &Observations, scale: &CoefficientFunction, gamma: &[f64]) -> Result<f64> {
    check_dim(scale, gamma)?;
    let inv_h = 1.0 / obs.h;
    let mut acc = 0.0;
    for (j, (&x, &d)) in obs.x.iter().zip(&obs.d).enumerate() {
        let (l, i) = scale_term(scale, x, gamma, j)?;
        acc += l + d * d * i * inv_h;
    }
    Ok(-acc)
}

/// `𝔾₁,ₙ(γ)`. Does not depend on any drift.
pub fn scale_contrast(path: &Path, scale: &CoefficientFunction, gamma: &[f64]) -> Result<f64> {
    scale_contrast_obs(&Observations::new(path), scale, gamma)
}

/// `𝔾₂,ₙ(α)` with precomputed weights `1/(h c²)`.
pub fn drift_contrast_weighted(obs: &Observations, weights: &[f64], drift: &CoefficientFunction, alpha: &[f64]) -> Result<f64> {
    check_dim(drift, alpha)?;
    let h = obs.h;
    let mut acc = 0.0;
    for ((&x, &d), &w) in obs.x.iter().zip(&obs.d).zip(weights) {
        let r = d - h * drift.evaluate(x, alpha);
        acc += w * r * r;
    }
    if !acc.is_finite() {
        return Err(Error::Numeric { message: format!("{}: drift contrast is not finite", drift.name()), residual: acc });
    }
    Ok(-acc)
}

/// `𝔾₂,ₙ(α)` given the step-one estimate `γ̂`.
pub fn drift_contrast(
    path: &Path,
    drift: &CoefficientFunction,
    alpha: &[f64],
    scale: &CoefficientFunction,
    gamma_hat: &[f64],
) -> Result<f64> {
    check_dim(scale, gamma_hat)?;
    let obs = Observations::new(path);
    let w = obs.drift_weights(scale, gamma_hat)?;
    drift_contrast_weighted(&obs, &w, drift, alpha)
}

/// Joint contrast `-Σ [log c² + (Δ_j X - h a)² / (h c²)]`.
pub fn joint_contrast(path: &Path, model: &ModelSpec, gamma: &[f64], alpha: &[f64]) -> Result<f64> {
    joint_contrast_obs(&Observations::new(path), &model.scale, gamma, &model.drift, alpha)
}

pub fn joint_contrast_obs(
    obs: &Observations,
    scale: &CoefficientFunction,
    gamma: &[f64],
    drift: &CoefficientFunction,
    alpha: &[f64],
) -> Result<f64> {
    check_dim(scale, gamma)?;
    check_dim(drift, alpha)?;
    let h = obs.h;
    let mut acc = 0.0;
    for (j, (&x, &d)) in obs.x.iter().zip(&obs.d).enumerate() {
        let (l, i) = scale_term(scale, x, gamma, j)?;
        let r = d - h * drift.evaluate(x, alpha);
        acc += l + r * r * i / h;
    }
    Ok(-acc)
}

/// Analytic gradient of `𝔾₁,ₙ` from the coefficient derivatives.
pub fn scale_contrast_gradient(obs: &Observations, scale: &CoefficientFunction, gamma: &[f64]) -> Result<Vec<f64>> {
    check_dim(scale, gamma)?;
    let p = gamma.len();
    let mut g = vec![0.0; p];
    let mut dc = vec![0.0; p];
    for (j, (&x, &d)) in obs.x.iter().zip(&obs.d).enumerate() {
        let c = scale.evaluate(x, gamma);
        let c2 = c * c;
        if !(c2.is_finite() && c2 > SCALE_FLOOR) {
            return Err(Error::DegenerateScale { index: j });
        }
        scale.gradient_into(x, gamma, &mut dc);
        let f = 2.0 / c * (1.0 - d * d / (obs.h * c2));
        for k in 0..p {
            g[k] -= f * dc[k];
        }
    }
    Ok(g)
}

/// Analytic Hessian of `𝔾₁,ₙ`.
pub fn scale_contrast_hessian(obs: &Observations, scale: &CoefficientFunction, gamma: &[f64]) -> Result<DMatrix<f64>> {
    check_dim(scale, gamma)?;
    let p = gamma.len();
    let mut hess = DMatrix::zeros(p, p);
    let mut dc = vec![0.0; p];
    for (j, (&x, &d)) in obs.x.iter().zip(&obs.d).enumerate() {
        let c = scale.evaluate(x, gamma);
        let c2 = c * c;
        if !(c2.is_finite() && c2 > SCALE_FLOOR) {
            return Err(Error::DegenerateScale { index: j });
        }
        scale.gradient_into(x, gamma, &mut dc);
        let ddc = scale.hessian(x, gamma);
        let dd = d * d / obs.h;
        for a in 0..p {
            for b in 0..p {
                let outer = dc[a] * dc[b];
                let second = ddc[a * p + b];
                hess[(a, b)] -= 2.0 * (second * c - outer) / c2 + dd * (-2.0 * second / (c2 * c) + 6.0 * outer / (c2 * c2));
            }
        }
    }
    Ok(hess)
}

/// Analytic gradient of `𝔾₂,ₙ` with precomputed weights.
pub fn drift_contrast_gradient(obs: &Observations, weights: &[f64], drift: &CoefficientFunction, alpha: &[f64]) -> Result<Vec<f64>> {
    check_dim(drift, alpha)?;
    let p = alpha.len();
    let mut g = vec![0.0; p];
    let mut da = vec![0.0; p];
    for ((&x, &d), &w) in obs.x.iter().zip(&obs.d).zip(weights) {
        let r = d - obs.h * drift.evaluate(x, alpha);
        drift.gradient_into(x, alpha, &mut da);
        for k in 0..p {
            g[k] += 2.0 * w * obs.h * r * da[k];
        }
    }
    Ok(g)
}

/// Analytic Hessian of `𝔾₂,ₙ` with precomputed weights.
pub fn drift_contrast_hessian(obs: &Observations, weights: &[f64], drift: &CoefficientFunction, alpha: &[f64]) -> Result<DMatrix<f64>> {
    check_dim(drift, alpha)?;
    let p = alpha.len();
    let h = obs.h;
    let mut hess = DMatrix::zeros(p, p);
    let mut da = vec![0.0; p];
    for ((&x, &d), &w) in obs.x.iter().zip(&obs.d).zip(weights) {
        let r = d - h * drift.evaluate(x, alpha);
        drift.gradient_into(x, alpha, &mut da);
        let dda = drift.hessian(x, alpha);
        for a in 0..p {
            for b in 0..p {
                hess[(a, b)] += 2.0 * w * h * (r * dda[a * p + b] - h * da[a] * da[b]);
            }
        }
    }
    Ok(hess)
}

fn check_domain(f: &CoefficientFunction, domain: &ParameterDomain) -> Result<()> {
    if f.dim() != domain.dim() {
        return Err(Error::invalid(format!("{}: {} parameters, domain of dimension {}", f.name(), f.dim(), domain.dim())));
    }
    Ok(())
}

pub fn fit_scale_obs(obs: &Observations, scale: &CoefficientFunction, domain: &ParameterDomain, opts: &FitOptions) -> Result<ScaleFit> {
    check_domain(scale, domain)?;
    if domain.dim() == 0 {
        let g1 = scale_contrast_obs(obs, scale, &[])?;
        return Ok(ScaleFit { gamma_hat: vec![], g1, diag: trivial_diag("none") });
    }
    let out = maximize(|g| scale_contrast_obs(obs, scale, g), domain, &opts.optim)?;
    Ok(ScaleFit { diag: FitDiagnostics::from_outcome(&out), gamma_hat: out.argmax, g1: out.value })
}

/// Step one: `γ̂ ∈ argmax 𝔾₁,ₙ` over the closed box.
pub fn fit_scale(path: &Path, scale: &CoefficientFunction, domain: &ParameterDomain, opts: &FitOptions) -> Result<ScaleFit> {
    fit_scale_obs(&Observations::new(path), scale, domain, opts)
}

fn trivial_diag(method: &str) -> FitDiagnostics {
    FitDiagnostics {
        method: method.into(),
        evaluations: 1,
        restarts: 0,
        converged: true,
        boundary_contact: false,
        multiplicity: 1,
    }
}

/// Weighted least-squares solution of the normal equations, if the drift
/// declares a linear basis and the system is positive definite.
pub fn wls_drift(obs: &Observations, weights: &[f64], drift: &CoefficientFunction) -> Option<Vec<f64>> {
    let basis = drift.basis()?;
    let p = basis.dim();
    let h = obs.h;
    let mut gram = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DVector::<f64>::zeros(p);
    let mut phi = vec![0.0; p];
    for ((&x, &d), &w) in obs.x.iter().zip(&obs.d).zip(weights) {
        let y = d - h * basis.offset(x);
        for (k, v) in phi.iter_mut().enumerate() {
            *v = h * basis.term(k, x);
        }
        for a in 0..p {
            rhs[a] += w * phi[a] * y;
            for b in 0..=a {
                gram[(a, b)] += w * phi[a] * phi[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            gram[(b, a)] = gram[(a, b)];
        }
    }
    let sol = gram.cholesky()?.solve(&rhs);
    sol.iter().all(|v| v.is_finite()).then(|| sol.iter().copied().collect())
}

pub fn fit_drift_weighted(
    obs: &Observations,
    weights: &[f64],
    drift: &CoefficientFunction,
    domain: &ParameterDomain,
    opts: &FitOptions,
) -> Result<DriftFit> {
    check_domain(drift, domain)?;
    let p = domain.dim();
    if p == 0 {
        let g2 = drift_contrast_weighted(obs, weights, drift, &[])?;
        return Ok(DriftFit { alpha_hat: vec![], g2, diag: trivial_diag("none") });
    }
    let objective = |a: &[f64]| drift_contrast_weighted(obs, weights, drift, a);
    let closed = if opts.closed_form_drift { wls_drift(obs, weights, drift) } else { None };
    if let Some(sol) = closed {
        if domain.contains(&sol) {
            let g2 = objective(&sol)?;
            let boundary_contact = domain.near_boundary(&sol, opts.optim.boundary_tol);
            return Ok(DriftFit { alpha_hat: sol, g2, diag: FitDiagnostics { boundary_contact, ..trivial_diag("wls") } });
        }
        if p == 1 {
            // a concave quadratic in one variable is maximized at the projection
            let a = domain.project(&sol);
            let g2 = objective(&a)?;
            return Ok(DriftFit { alpha_hat: a, g2, diag: FitDiagnostics { boundary_contact: true, ..trivial_diag("wls+projection") } });
        }
        let mut starts = vec![domain.project(&sol)];
        starts.extend(start_points(domain, opts.optim.quasi_random_starts));
        let out = maximize_from(objective, domain, &starts, &opts.optim)?;
        return Ok(DriftFit { diag: FitDiagnostics::from_outcome(&out), alpha_hat: out.argmax, g2: out.value });
    }
    let out = maximize(objective, domain, &opts.optim)?;
    Ok(DriftFit { diag: FitDiagnostics::from_outcome(&out), alpha_hat: out.argmax, g2: out.value })
}

/// Step two: `α̂ ∈ argmax 𝔾₂,ₙ` given `γ̂`.
pub fn fit_drift(
    path: &Path,
    drift: &CoefficientFunction,
    domain: &ParameterDomain,
    scale: &CoefficientFunction,
    gamma_hat: &[f64],
    opts: &FitOptions,
) -> Result<DriftFit> {
    check_dim(scale, gamma_hat)?;
    let obs = Observations::new(path);
    let w = obs.drift_weights(scale, gamma_hat)?;
    fit_drift_weighted(&obs, &w, drift, domain, opts)
}

/// Stepwise fit of one candidate model.
pub fn fit_model(path: &Path, model: &ModelSpec, opts: &FitOptions) -> Result<FitResult> {
    let obs = Observations::new(path);
    let s = fit_scale_obs(&obs, &model.scale, &model.scale_domain, opts)?;
    let w = obs.drift_weights(&model.scale, &s.gamma_hat)?;
    let d = fit_drift_weighted(&obs, &w, &model.drift, &model.drift_domain, opts)?;
    Ok(FitResult {
        model: model.label.clone(),
        gamma_hat: s.gamma_hat,
        alpha_hat: d.alpha_hat,
        g1: s.g1,
        g2: d.g2,
        diag: FitDiagnosticsPair { scale: s.diag, drift: d.diag },
    })
}

/// Joint maximizer of the joint contrast over the product box, as
/// `(γ, α, value)`.
pub fn fit_joint(path: &Path, model: &ModelSpec, opts: &FitOptions) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let obs = Observations::new(path);
    let pg = model.scale_domain.dim();
    let lower = [model.scale_domain.lower(), model.drift_domain.lower()].concat();
    let upper = [model.scale_domain.upper(), model.drift_domain.upper()].concat();
    let domain = ParameterDomain::new(lower, upper)?;
    let stepwise = fit_model(path, model, opts)?;
    let mut starts = vec![[stepwise.gamma_hat, stepwise.alpha_hat].concat()];
    starts.extend(start_points(&domain, opts.optim.quasi_random_starts));
    let out = maximize_from(
        |t| joint_contrast_obs(&obs, &model.scale, &t[..pg], &model.drift, &t[pg..]),
        &domain,
        &starts,
        &opts.optim,
    )?;
    Ok((out.argmax[..pg].to_vec(), out.argmax[pg..].to_vec(), out.value))
}

/// Fits a list of candidates sharing one path.
pub fn fit_candidates(path: &Path, scale: &Candidate, drifts: &[Candidate], opts: &FitOptions) -> Result<(ScaleFit, Vec<Result<DriftFit>>)> {
    let obs = Observations::new(path);
    let s = fit_scale_obs(&obs, &scale.function, &scale.domain, opts)?;
    let w = obs.drift_weights(&scale.function, &s.gamma_hat)?;
    let fits = drifts.iter().map(|d| fit_drift_weighted(&obs, &w, &d.function, &d.domain, opts)).collect();
    Ok((s, fits))
}
