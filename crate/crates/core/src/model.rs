//! Domain types shared across the crate: sampling schemes, observation paths,
//! parameter boxes, coefficient functions and candidate sets.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::RngStream;

/// Threshold on `n h²` above which the scheme is flagged as outside the
/// high-frequency regime (`n h² → 0`).
pub const HIGH_FREQUENCY_LIMIT: f64 = 0.5;

/// Equidistant sampling `t_j = j h`, `j = 0..=n`, with horizon `T = n h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingScheme {
    n: usize,
    h: f64,
    horizon: f64,
    high_frequency_warning: bool,
}

impl SamplingScheme {
    pub fn new(n: usize, h: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::invalid(format!("sample count must be at least 2, got {n}")));
        }
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::invalid(format!("step size must be positive, got {h}")));
        }
        let horizon = n as f64 * h;
        Ok(Self {
            n,
            h,
            horizon,
            high_frequency_warning: horizon * h >= HIGH_FREQUENCY_LIMIT,
        })
    }

    /// Builds the scheme for step `h` and horizon `t`; `t / h` must be an
    /// integer up to rounding noise.
    pub fn from_horizon(h: f64, t: f64) -> Result<Self> {
        if !(h.is_finite() && h > 0.0 && t.is_finite() && t > 0.0) {
            return Err(Error::invalid(format!("invalid (h, T) = ({h}, {t})")));
        }
        let ratio = t / h;
        let n = ratio.round();
        if (ratio - n).abs() > 1e-6 * n.max(1.0) {
            return Err(Error::invalid(format!("T / h = {ratio} is not an integer")));
        }
        Self::new(n as usize, h)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Terminal time `T = n h`.
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn time(&self, j: usize) -> f64 {
        j as f64 * self.h
    }

    /// `true` when `n h² ≥ 0.5`.
    pub fn high_frequency_warning(&self) -> bool {
        self.high_frequency_warning
    }
}

/// Same as [`SamplingScheme::new`].
pub fn make_scheme(n: usize, h: f64) -> Result<SamplingScheme> {
    SamplingScheme::new(n, h)
}

/// Where a path came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathMeta {
    pub seed: u64,
    pub stream_id: u64,
    pub model: String,
    pub noise: String,
}

/// Discrete observations `X_{t_0}, …, X_{t_n}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    scheme: SamplingScheme,
    values: Vec<f64>,
    meta: Option<PathMeta>,
}

impl Path {
    pub fn new(scheme: SamplingScheme, values: Vec<f64>) -> Result<Self> {
        if values.len() != scheme.n() + 1 {
            return Err(Error::invalid(format!(
                "path has {} values, scheme expects {}",
                values.len(),
                scheme.n() + 1
            )));
        }
        if let Some(j) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("path value {j} is not finite")));
        }
        Ok(Self { scheme, values, meta: None })
    }

    pub fn with_meta(mut self, meta: PathMeta) -> Self {
        self.meta = Some(meta);
        self
    }

    pub fn scheme(&self) -> &SamplingScheme {
        &self.scheme
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn meta(&self) -> Option<&PathMeta> {
        self.meta.as_ref()
    }

    /// `Δ_j X = X_j - X_{j-1}` for `j = 1..=n`.
    pub fn increments(&self) -> Vec<f64> {
        increments(self)
    }

    /// Left endpoints `X_0, …, X_{n-1}` paired with the increments.
    pub(crate) fn left_points(&self) -> &[f64] {
        &self.values[..self.values.len() - 1]
    }
}

pub fn increments(path: &Path) -> Vec<f64> {
    path.values.windows(2).map(|w| w[1] - w[0]).collect()
}

/// Axis-aligned box `Π [lower_i, upper_i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterDomain {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl ParameterDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::invalid(format!(
                "domain bounds must be non-empty and equal length ({} vs {})",
                lower.len(),
                upper.len()
            )));
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::invalid(format!("coordinate {i}: need lower < upper, got [{lo}, {hi}]")));
            }
        }
        Ok(Self { lower, upper })
    }

    /// The zero-dimensional domain of a parameter-free coefficient.
    pub fn empty() -> Self {
        Self { lower: vec![], upper: vec![] }
    }

    /// The cube `[lo, hi]^dim`.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(t, (lo, hi))| *t >= *lo && *t <= *hi)
    }

    pub fn project(&self, theta: &[f64]) -> Vec<f64> {
        theta
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(t, (lo, hi))| t.clamp(*lo, *hi))
            .collect()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(lo, hi)| 0.5 * (lo + hi)).collect()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(lo, hi)| hi - lo).collect()
    }

    pub fn volume(&self) -> f64 {
        self.widths().iter().product()
    }

    /// `true` if some coordinate lies within `tol · width` of a face.
    pub fn near_boundary(&self, theta: &[f64], tol: f64) -> bool {
        theta.iter().zip(self.lower.iter().zip(&self.upper)).any(|(t, (lo, hi))| {
            let eps = tol * (hi - lo);
            *t - lo <= eps || hi - *t <= eps
        })
    }

    /// Intersection with another box of the same dimension, if non-empty.
    pub fn intersect(&self, other: &ParameterDomain) -> Option<ParameterDomain> {
        if other.dim() != self.dim() {
            return None;
        }
        let lower: Vec<f64> = self.lower.iter().zip(&other.lower).map(|(a, b)| a.max(*b)).collect();
        let upper: Vec<f64> = self.upper.iter().zip(&other.upper).map(|(a, b)| a.min(*b)).collect();
        ParameterDomain::new(lower, upper).ok()
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| lo + (hi - lo) * rng.random::<f64>())
            .collect()
    }
}

pub type ValueFn = dyn Fn(f64, &[f64]) -> f64 + Send + Sync;
/// Writes `∂_θ f(x, θ)` into the output slice.
pub type GradientFn = dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync;
/// Writes the row-major `p × p` Hessian `∂²_θ f(x, θ)` into the output slice.
pub type HessianFn = dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync;
pub type BasisFn = dyn Fn(f64) -> f64 + Send + Sync;

/// Declared decomposition `f(x, θ) = φ_0(x) + Σ_k θ_k φ_k(x)`.
#[derive(Clone)]
pub struct LinearBasis {
    terms: Vec<Arc<BasisFn>>,
    offset: Option<Arc<BasisFn>>,
}

impl LinearBasis {
    pub fn new(terms: Vec<Arc<BasisFn>>, offset: Option<Arc<BasisFn>>) -> Self {
        Self { terms, offset }
    }

    pub fn dim(&self) -> usize {
        self.terms.len()
    }

    pub fn term(&self, k: usize, x: f64) -> f64 {
        (self.terms[k])(x)
    }

    pub fn offset(&self, x: f64) -> f64 {
        self.offset.as_ref().map_or(0.0, |f| f(x))
    }

    pub fn evaluate(&self, x: f64, theta: &[f64]) -> f64 {
        self.offset(x) + self.terms.iter().zip(theta).map(|(f, t)| t * f(x)).sum::<f64>()
    }
}

/// A parametric coefficient `x ↦ f(x, θ)` with optional analytic derivatives.
///
/// Missing derivatives are replaced by central finite differences with step
/// `1e-5 (1 + |θ_k|)`. Evaluation must be re-entrant.
#[derive(Clone)]
pub struct CoefficientFunction {
    name: String,
    dim: usize,
    value: Arc<ValueFn>,
    log_abs: Option<Arc<ValueFn>>,
    gradient: Option<Arc<GradientFn>>,
    hessian: Option<Arc<HessianFn>>,
    linear: Option<LinearBasis>,
}

impl fmt::Debug for CoefficientFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientFunction")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("analytic_gradient", &self.gradient.is_some())
            .field("analytic_hessian", &self.hessian.is_some())
            .field("linear_in_params", &self.linear.is_some())
            .finish()
    }
}

impl CoefficientFunction {
    pub fn new<F>(name: impl Into<String>, dim: usize, value: F) -> Self
    where
        F: Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            dim,
            value: Arc::new(value),
            log_abs: None,
            gradient: None,
            hessian: None,
            linear: None,
        }
    }

    /// A coefficient that is affine in its parameters; value, gradient and
    /// (zero) Hessian all come from the basis.
    pub fn linear(name: impl Into<String>, basis: LinearBasis) -> Self {
        let dim = basis.dim();
        let b_value = basis.clone();
        let b_grad = basis.clone();
        Self {
            name: name.into(),
            dim,
            value: Arc::new(move |x, th| b_value.evaluate(x, th)),
            log_abs: None,
            gradient: Some(Arc::new(move |x, _th, out| {
                for (k, o) in out.iter_mut().enumerate() {
                    *o = b_grad.term(k, x);
                }
            })),
            hessian: Some(Arc::new(|_x, _th, out| out.fill(0.0))),
            linear: Some(basis),
        }
    }

    pub fn with_gradient<G>(mut self, gradient: G) -> Self
    where
        G: Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        self.gradient = Some(Arc::new(gradient));
        self
    }

    pub fn with_hessian<H>(mut self, hessian: H) -> Self
    where
        H: Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        self.hessian = Some(Arc::new(hessian));
        self
    }

    /// Supplies `ln |f(x, θ)|` directly, which the contrasts use instead of
    /// taking a logarithm per observation.
    pub fn with_log_abs<L>(mut self, log_abs: L) -> Self
    where
        L: Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
    {
        self.log_abs = Some(Arc::new(log_abs));
        self
    }

    /// Declares an affine decomposition without changing `evaluate`. Use
    /// [`CoefficientFunction::linear_declaration_holds`] to check it.
    pub fn declare_linear(mut self, basis: LinearBasis) -> Self {
        self.linear = Some(basis);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_linear_in_params(&self) -> bool {
        self.linear.is_some()
    }

    pub fn basis(&self) -> Option<&LinearBasis> {
        self.linear.as_ref()
    }

    pub fn has_analytic_gradient(&self) -> bool {
        self.gradient.is_some()
    }

    pub fn evaluate(&self, x: f64, theta: &[f64]) -> f64 {
        (self.value)(x, theta)
    }

    pub fn log_abs(&self, x: f64, theta: &[f64]) -> f64 {
        match &self.log_abs {
            Some(f) => f(x, theta),
            None => self.evaluate(x, theta).abs().ln(),
        }
    }

    pub(crate) fn has_log_abs(&self) -> bool {
        self.log_abs.is_some()
    }

    pub fn gradient(&self, x: f64, theta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.gradient_into(x, theta, &mut out);
        out
    }

    pub fn gradient_into(&self, x: f64, theta: &[f64], out: &mut [f64]) {
        match &self.gradient {
            Some(g) => g(x, theta, out),
            None => {
                let mut th = theta.to_vec();
                for k in 0..self.dim {
                    let step = fd_step(theta[k]);
                    th[k] = theta[k] + step;
                    let up = self.evaluate(x, &th);
                    th[k] = theta[k] - step;
                    let down = self.evaluate(x, &th);
                    th[k] = theta[k];
                    out[k] = (up - down) / (2.0 * step);
                }
            }
        }
    }

    /// Row-major `p × p` parameter Hessian.
    pub fn hessian(&self, x: f64, theta: &[f64]) -> Vec<f64> {
        let p = self.dim;
        let mut out = vec![0.0; p * p];
        if let Some(h) = &self.hessian {
            h(x, theta, &mut out);
            return out;
        }
        let mut th = theta.to_vec();
        if self.gradient.is_some() {
            let mut up = vec![0.0; p];
            let mut down = vec![0.0; p];
            for k in 0..p {
                let step = fd_step(theta[k]);
                th[k] = theta[k] + step;
                self.gradient_into(x, &th, &mut up);
                th[k] = theta[k] - step;
                self.gradient_into(x, &th, &mut down);
                th[k] = theta[k];
                for l in 0..p {
                    out[k * p + l] = (up[l] - down[l]) / (2.0 * step);
                }
            }
        } else {
            let f0 = self.evaluate(x, theta);
            for k in 0..p {
                let sk = fd_step(theta[k]).sqrt() * 1e-1;
                for l in k..p {
                    let sl = fd_step(theta[l]).sqrt() * 1e-1;
                    let v = if k == l {
                        th[k] = theta[k] + sk;
                        let up = self.evaluate(x, &th);
                        th[k] = theta[k] - sk;
                        let down = self.evaluate(x, &th);
                        th[k] = theta[k];
                        (up - 2.0 * f0 + down) / (sk * sk)
                    } else {
                        let mut corner = |a: f64, b: f64| {
                            th[k] = theta[k] + a;
                            th[l] = theta[l] + b;
                            let v = self.evaluate(x, &th);
                            th[k] = theta[k];
                            th[l] = theta[l];
                            v
                        };
                        (corner(sk, sl) - corner(sk, -sl) - corner(-sk, sl) + corner(-sk, -sl))
                            / (4.0 * sk * sl)
                    };
                    out[k * p + l] = v;
                    out[l * p + k] = v;
                }
            }
        }
        // symmetrize finite-difference noise
        for k in 0..p {
            for l in (k + 1)..p {
                let v = 0.5 * (out[k * p + l] + out[l * p + k]);
                out[k * p + l] = v;
                out[l * p + k] = v;
            }
        }
        out
    }

    /// Checks `evaluate == basis` pointwise on `xs × thetas` within `tol`
    /// (relative to `1 + |value|`). Returns `true` when nothing is declared.
    pub fn linear_declaration_holds(&self, xs: &[f64], thetas: &[Vec<f64>], tol: f64) -> bool {
        let Some(basis) = &self.linear else {
            return true;
        };
        xs.iter().all(|&x| {
            thetas.iter().all(|th| {
                let v = self.evaluate(x, th);
                (v - basis.evaluate(x, th)).abs() <= tol * (1.0 + v.abs())
            })
        })
    }
}

/// Central finite-difference step for a parameter coordinate.
pub fn fd_step(theta: f64) -> f64 {
    1e-5 * (1.0 + theta.abs())
}

/// One entry of a candidate list: a coefficient family and its parameter box.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub function: CoefficientFunction,
    pub domain: ParameterDomain,
}

impl Candidate {
    pub fn new(function: CoefficientFunction, domain: ParameterDomain) -> Result<Self> {
        if function.dim() != domain.dim() {
            return Err(Error::invalid(format!(
                "{}: coefficient has {} parameters, domain has {}",
                function.name(),
                function.dim(),
                domain.dim()
            )));
        }
        Ok(Self { function, domain })
    }

    pub fn label(&self) -> &str {
        self.function.name()
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }
}

/// A single candidate SDE model `dX = a(X, α) dt + c(X-, γ) dZ`.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub label: String,
    pub drift: CoefficientFunction,
    pub drift_domain: ParameterDomain,
    pub scale: CoefficientFunction,
    pub scale_domain: ParameterDomain,
}

impl ModelSpec {
    pub fn new(drift: Candidate, scale: Candidate) -> Self {
        Self {
            label: format!("{}+{}", scale.label(), drift.label()),
            drift: drift.function,
            drift_domain: drift.domain,
            scale: scale.function,
            scale_domain: scale.domain,
        }
    }

    /// Randomized probe of `c(x, γ) ≠ 0` over `x ∈ [-x_range, x_range]` and
    /// `γ` drawn from the scale domain (plus its centre and two corners).
    /// Not a proof.
    pub fn check_nonvanishing_scale(&self, probes: usize, x_range: f64, rng: &RngStream) -> Result<()> {
        check_nonvanishing(&self.scale, &self.scale_domain, probes, x_range, rng)
    }
}

pub fn check_nonvanishing(
    scale: &CoefficientFunction,
    domain: &ParameterDomain,
    probes: usize,
    x_range: f64,
    rng: &RngStream,
) -> Result<()> {
    let mut g = rng.generator();
    let mut thetas = vec![domain.center(), domain.lower().to_vec(), domain.upper().to_vec()];
    thetas.extend((0..probes).map(|_| domain.sample_uniform(&mut g)));
    for th in &thetas {
        for i in 0..probes.max(1) {
            let x = if i == 0 { 0.0 } else { x_range * (2.0 * g.random::<f64>() - 1.0) };
            let c = scale.evaluate(x, th);
            if !(c.is_finite() && c != 0.0) {
                return Err(Error::invalid(format!(
                    "{}: scale is {c} at x = {x}, γ = {th:?}",
                    scale.name()
                )));
            }
        }
    }
    Ok(())
}

/// `M₁` scale and `M₂` drift candidates.
#[derive(Debug, Clone)]
pub struct CandidateSet {
    pub scales: Vec<Candidate>,
    pub drifts: Vec<Candidate>,
}

impl CandidateSet {
    pub fn new(scales: Vec<Candidate>, drifts: Vec<Candidate>) -> Result<Self> {
        if scales.is_empty() || drifts.is_empty() {
            return Err(Error::invalid("candidate set needs at least one scale and one drift"));
        }
        Ok(Self { scales, drifts })
    }

    pub fn scale_labels(&self) -> Vec<String> {
        self.scales.iter().map(|c| c.label().to_string()).collect()
    }

    pub fn drift_labels(&self) -> Vec<String> {
        self.drifts.iter().map(|c| c.label().to_string()).collect()
    }
}
