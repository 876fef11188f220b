//! Log-marginal quasi-likelihoods by quadrature and their Laplace-type
//! expansions.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gql::{
    drift_contrast_hessian, drift_contrast_weighted, fit_drift_weighted, fit_scale_obs, scale_contrast_hessian,
    scale_contrast_obs, FitOptions, Observations,
};
use crate::limits::is_positive_definite;
use crate::model::{CoefficientFunction, ParameterDomain, Path};
use crate::quadrature::gauss_legendre_on;

/// Half-width of the integration window in posterior standard deviations.
pub const WINDOW_SDS: f64 = 12.0;
/// Successive refinements must agree to this absolute tolerance.
pub const REFINE_TOL: f64 = 1e-6;
const FIRST_NODES: usize = 16;
const MAX_NODES: [usize; 2] = [2048, 256];

pub type PriorFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// A prior density on a box, zero outside it.
#[derive(Clone)]
pub struct PriorDensity {
    density: Arc<PriorFn>,
    support: ParameterDomain,
    sup_bound: f64,
}

impl fmt::Debug for PriorDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PriorDensity").field("support", &self.support).field("sup_bound", &self.sup_bound).finish()
    }
}

impl PriorDensity {
    pub fn uniform(support: ParameterDomain) -> Result<Self> {
        let vol = support.volume();
        if !(vol > 0.0 && vol.is_finite()) {
            return Err(Error::invalid("uniform prior needs a box of positive volume"));
        }
        let d = 1.0 / vol;
        Ok(Self { density: Arc::new(move |_| d), support, sup_bound: d })
    }

    pub fn new<F>(density: F, support: ParameterDomain, sup_bound: f64) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Self { density: Arc::new(density), support, sup_bound }
    }

    pub fn support(&self) -> &ParameterDomain {
        &self.support
    }

    pub fn sup_bound(&self) -> f64 {
        self.sup_bound
    }

    pub fn density(&self, theta: &[f64]) -> f64 {
        if self.support.contains(theta) {
            (self.density)(theta)
        } else {
            0.0
        }
    }

    /// Total mass by tensor Gauss–Legendre with `nodes` points per axis.
    pub fn mass(&self, nodes: usize) -> Result<f64> {
        let rules = axis_rules(&self.support, nodes)?;
        let mut total = 0.0;
        for_each_node(&rules, |theta, w| total += w * self.density(theta));
        Ok(total)
    }
}

fn axis_rules(window: &ParameterDomain, nodes: usize) -> Result<Vec<crate::quadrature::Rule>> {
    window.lower().iter().zip(window.upper()).map(|(lo, hi)| gauss_legendre_on(nodes, *lo, *hi)).collect()
}

fn for_each_node<F: FnMut(&[f64], f64)>(rules: &[crate::quadrature::Rule], mut f: F) {
    match rules {
        [] => f(&[], 1.0),
        [r] => {
            for (x, w) in r.nodes.iter().zip(&r.weights) {
                f(&[*x], *w);
            }
        }
        [r1, r2] => {
            for (x, w) in r1.nodes.iter().zip(&r1.weights) {
                for (y, v) in r2.nodes.iter().zip(&r2.weights) {
                    f(&[*x, *y], w * v);
                }
            }
        }
        _ => unreachable!("dimension checked by caller"),
    }
}

/// Integration window: prior support ∩ `mode ± WINDOW_SDS · sd`, where `sd`
/// comes from the inverse of `-hessian`. Falls back to the whole support when
/// the curvature is not usable.
pub fn integration_window(support: &ParameterDomain, mode: &[f64], hessian: Option<&DMatrix<f64>>) -> Option<ParameterDomain> {
    let p = support.dim();
    let sds: Option<Vec<f64>> = hessian.and_then(|h| {
        let neg = -h;
        let inv = neg.clone().cholesky()?.inverse();
        let sds: Vec<f64> = (0..p).map(|k| inv[(k, k)].sqrt()).collect();
        sds.iter().all(|s| s.is_finite() && *s > 0.0).then_some(sds)
    });
    match sds {
        Some(sds) => {
            let lower = (0..p).map(|k| mode[k] - WINDOW_SDS * sds[k]).collect();
            let upper = (0..p).map(|k| mode[k] + WINDOW_SDS * sds[k]).collect();
            support.intersect(&ParameterDomain::new(lower, upper).ok()?)
        }
        None => Some(support.clone()),
    }
}

/// `log ∫ exp(G(θ)) π(θ) dθ` by max-shifted tensor Gauss–Legendre, doubling
/// the nodes per axis until two successive values agree within `REFINE_TOL`.
///
/// `mode` and `hessian` only place the integration window.
pub fn log_marginal<F>(contrast: F, prior: &PriorDensity, mode: &[f64], hessian: Option<&DMatrix<f64>>) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let p = prior.support.dim();
    if p > 2 {
        return Err(Error::UnsupportedDimension(p));
    }
    if p == 0 {
        return Ok(contrast(&[])? + prior.density(&[]).ln());
    }
    let Some(window) = integration_window(&prior.support, mode, hessian) else {
        return Ok(f64::NEG_INFINITY);
    };
    let mut previous: Option<f64> = None;
    let mut nodes = FIRST_NODES;
    while nodes <= MAX_NODES[p - 1] {
        let rules = axis_rules(&window, nodes)?;
        let mut terms = Vec::with_capacity(nodes.pow(p as u32));
        let mut failure = None;
        for_each_node(&rules, |theta, w| {
            let pr = prior.density(theta);
            if pr <= 0.0 || failure.is_some() {
                return;
            }
            match contrast(theta) {
                Ok(g) if g.is_finite() => terms.push((g, w * pr)),
                Ok(_) => {}
                Err(e) => failure = Some(e),
            }
        });
        if let Some(e) = failure {
            return Err(e);
        }
        let shift = terms.iter().map(|t| t.0).fold(f64::NEG_INFINITY, f64::max);
        let value = if shift.is_finite() {
            shift + terms.iter().map(|(g, w)| w * (g - shift).exp()).sum::<f64>().ln()
        } else {
            f64::NEG_INFINITY
        };
        if let Some(prev) = previous {
            if (value - prev).abs() < REFINE_TOL || (value == prev) {
                return Ok(value);
            }
        }
        previous = Some(value);
        nodes *= 2;
    }
    Err(Error::Numeric {
        message: format!("log-marginal quadrature did not settle by {} nodes per axis", MAX_NODES[p - 1]),
        residual: f64::NAN,
    })
}

/// Quadrature value together with the fit it was localized at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalValue {
    pub log_marginal: f64,
    pub theta_hat: Vec<f64>,
    pub contrast_at_max: f64,
    /// `-(1/rate) ∂²G(θ̂)`, rate `n` for the scale and `T_n` for the drift.
    pub data_fisher: Vec<Vec<f64>>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub fn rows_to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let p = rows.len();
    DMatrix::from_fn(p, p, |i, j| rows[i][j])
}

/// `log ∫ exp(𝔾₁,ₙ(γ)) π₁(γ) dγ`.
pub fn log_marginal_scale(
    path: &Path,
    scale: &CoefficientFunction,
    domain: &ParameterDomain,
    prior: &PriorDensity,
    opts: &FitOptions,
) -> Result<MarginalValue> {
    if domain.dim() > 2 {
        return Err(Error::UnsupportedDimension(domain.dim()));
    }
    let obs = Observations::new(path);
    let fit = fit_scale_obs(&obs, scale, domain, opts)?;
    let hess = scale_contrast_hessian(&obs, scale, &fit.gamma_hat)?;
    let lm = log_marginal(|g| scale_contrast_obs(&obs, scale, g), prior, &fit.gamma_hat, Some(&hess))?;
    Ok(MarginalValue {
        log_marginal: lm,
        data_fisher: rows(&(-hess / obs.n() as f64)),
        theta_hat: fit.gamma_hat,
        contrast_at_max: fit.g1,
    })
}

/// `log ∫ exp(𝔾₂,ₙ(α)) π₂(α) dα` given `γ̂`.
pub fn log_marginal_drift(
    path: &Path,
    drift: &CoefficientFunction,
    domain: &ParameterDomain,
    prior: &PriorDensity,
    scale: &CoefficientFunction,
    gamma_hat: &[f64],
    opts: &FitOptions,
) -> Result<MarginalValue> {
    if domain.dim() > 2 {
        return Err(Error::UnsupportedDimension(domain.dim()));
    }
    let obs = Observations::new(path);
    let w = obs.drift_weights(scale, gamma_hat)?;
    let fit = fit_drift_weighted(&obs, &w, drift, domain, opts)?;
    let hess = drift_contrast_hessian(&obs, &w, drift, &fit.alpha_hat)?;
    let lm = log_marginal(|a| drift_contrast_weighted(&obs, &w, drift, a), prior, &fit.alpha_hat, Some(&hess))?;
    Ok(MarginalValue {
        log_marginal: lm,
        data_fisher: rows(&(-hess / obs.horizon())),
        theta_hat: fit.alpha_hat,
        contrast_at_max: fit.g2,
    })
}

fn expansion(g: f64, p: usize, rate: f64, prior_at_star: f64, fisher: &DMatrix<f64>) -> Result<f64> {
    if p == 0 {
        return Ok(g);
    }
    if fisher.nrows() != p || fisher.ncols() != p {
        return Err(Error::invalid(format!("Fisher matrix is {}×{}, expected {p}×{p}", fisher.nrows(), fisher.ncols())));
    }
    if !is_positive_definite(fisher) {
        return Err(Error::invalid("Fisher matrix is not positive definite"));
    }
    if !(prior_at_star > 0.0) {
        return Err(Error::invalid(format!("prior density at the optimum must be positive, got {prior_at_star}")));
    }
    if !(rate > 0.0) {
        return Err(Error::invalid(format!("rate must be positive, got {rate}")));
    }
    let pf = p as f64;
    Ok(g - 0.5 * pf * rate.ln() + prior_at_star.ln() + 0.5 * pf * (2.0 * std::f64::consts::PI).ln()
        - 0.5 * fisher.determinant().ln())
}

/// `𝔾₁,ₙ(γ̂) - ½p log n + log π₁(γ*) + (p/2) log 2π - ½ log det ℐ_γ`.
pub fn expansion_prediction_scale(g1_at_max: f64, p_gamma: usize, n: usize, prior_at_star: f64, fisher: &DMatrix<f64>) -> Result<f64> {
    expansion(g1_at_max, p_gamma, n as f64, prior_at_star, fisher)
}

/// `𝔾₂,ₙ(α̂) - ½p log T_n + log π₂(α*) + (p/2) log 2π - ½ log det ℐ_α`.
pub fn expansion_prediction_drift(g2_at_max: f64, p_alpha: usize, horizon: f64, prior_at_star: f64, fisher: &DMatrix<f64>) -> Result<f64> {
    expansion(g2_at_max, p_alpha, horizon, prior_at_star, fisher)
}

/// One row of the `verify-expansion` output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionRecord {
    pub n: usize,
    pub replicate: u64,
    pub log_marginal: f64,
    pub prediction: f64,
    pub residual: f64,
}
