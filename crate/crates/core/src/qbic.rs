//! Two-step quasi-Bayesian information criteria and model weights.
//!
//! Criteria are `-2 𝔾(θ̂) + p log(rate)` and are minimized. The weight matrix
//! is the product of two softmax factors of `-½ Δ`; [`stepwise_select`] feeds
//! it `QBIC / 2 = -𝔾(θ̂) + ½ p log(rate)`.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::gql::{fit_drift_weighted, fit_scale_obs, DriftFit, FitOptions, Observations, ScaleFit};
use crate::model::{CandidateSet, Path};

/// `-2 g1 + p log n`.
pub fn qbic_scale(g1_at_max: f64, p_gamma: usize, n: usize) -> f64 {
    -2.0 * g1_at_max + p_gamma as f64 * (n as f64).ln()
}

/// `-2 g2 + p log T`.
pub fn qbic_drift(g2_at_max: f64, p_alpha: usize, horizon: f64) -> Result<f64> {
    if !(horizon > 0.0) {
        return Err(Error::invalid(format!("horizon must be positive, got {horizon}")));
    }
    Ok(-2.0 * g2_at_max + p_alpha as f64 * horizon.ln())
}

/// Index of the smallest criterion; ties go to the smaller dimension, then
/// the lower index. `None` if nothing is finite.
pub fn argmin_with_ties(values: &[f64], dims: &[usize]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        if !v.is_finite() {
            continue;
        }
        best = match best {
            None => Some(i),
            Some(b) if *v < values[b] || (*v == values[b] && dims[i] < dims[b]) => Some(i),
            keep => keep,
        };
    }
    best
}

/// `exp(-½ (v - min))` normalized; non-finite entries get zero.
fn softmax_half(values: &[f64]) -> Option<Vec<f64>> {
    let min = values.iter().copied().filter(|v| v.is_finite()).fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return None;
    }
    let e: Vec<f64> = values
        .iter()
        .map(|v| if v.is_finite() { (-0.5 * (v - min)).exp() } else { 0.0 })
        .collect();
    let s: f64 = e.iter().sum();
    Some(e.into_iter().map(|v| v / s).collect())
}

/// `w[m₁][m₂] = 100 · softmax(-½ q1)[m₁] · softmax(-½ q2[m₁])[m₂]`.
///
/// `+inf` entries receive weight zero. A row of `q2` with no finite entry
/// contributes nothing and is only allowed when its scale weight is zero.
pub fn model_weights(qbic1: &[f64], qbic2: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if qbic2.len() != qbic1.len() {
        return Err(Error::invalid(format!("{} scale criteria but {} drift rows", qbic1.len(), qbic2.len())));
    }
    let outer = softmax_half(qbic1).ok_or_else(|| Error::invalid("no finite scale criterion"))?;
    let width = qbic2.first().map_or(0, Vec::len);
    let mut w = Vec::with_capacity(qbic1.len());
    for (k, row) in qbic2.iter().enumerate() {
        if row.len() != width {
            return Err(Error::invalid("drift criterion rows have different lengths"));
        }
        match softmax_half(row) {
            Some(inner) => w.push(inner.into_iter().map(|v| 100.0 * outer[k] * v).collect()),
            None if outer[k] == 0.0 => w.push(vec![0.0; width]),
            None => return Err(Error::invalid(format!("scale {} has weight but no finite drift criterion", k + 1))),
        }
    }
    Ok(w)
}

fn ser_reals<S: Serializer>(v: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(v.iter().map(|x| x.is_finite().then_some(*x)))
}

fn de_reals<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<f64>, D::Error> {
    let v: Vec<Option<f64>> = Deserialize::deserialize(d)?;
    Ok(v.into_iter().map(|x| x.unwrap_or(f64::INFINITY)).collect())
}

fn ser_matrix<S: Serializer>(m: &[Vec<f64>], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(m.iter().map(|row| row.iter().map(|x| x.is_finite().then_some(*x)).collect::<Vec<_>>()))
}

fn de_matrix<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<Vec<f64>>, D::Error> {
    let v: Vec<Vec<Option<f64>>> = Deserialize::deserialize(d)?;
    Ok(v.into_iter().map(|r| r.into_iter().map(|x| x.unwrap_or(f64::INFINITY)).collect()).collect())
}

/// Outcome of the two-step selection on one path. Indices are 0-based;
/// excluded candidates carry an infinite criterion (`null` in JSON).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QbicReport {
    pub scale_labels: Vec<String>,
    pub drift_labels: Vec<String>,
    #[serde(serialize_with = "ser_reals", deserialize_with = "de_reals")]
    pub qbic1: Vec<f64>,
    /// `qbic2[m₁][m₂]`, drift criteria conditional on scale `m₁`.
    #[serde(serialize_with = "ser_matrix", deserialize_with = "de_matrix")]
    pub qbic2: Vec<Vec<f64>>,
    pub selected_scale: usize,
    pub selected_drift: usize,
    pub weights: Vec<Vec<f64>>,
    pub scale_fits: Vec<Option<ScaleFit>>,
    pub drift_fits: Vec<Vec<Option<DriftFit>>>,
    /// One message per excluded fit.
    pub excluded: Vec<String>,
}

impl QbicReport {
    pub fn weight_total(&self) -> f64 {
        self.weights.iter().flatten().sum()
    }
}

/// Fits every scale candidate, selects `m̂₁`, fits every drift under every
/// scale, selects `m̂₂` under `m̂₁`, and computes the weight matrix.
pub fn stepwise_select(path: &Path, candidates: &CandidateSet, opts: &FitOptions) -> Result<QbicReport> {
    let obs = Observations::new(path);
    let n = obs.n();
    let horizon = obs.horizon();
    let m1 = candidates.scales.len();
    let m2 = candidates.drifts.len();
    let mut excluded = Vec::new();

    let mut scale_fits = Vec::with_capacity(m1);
    let mut qbic1 = Vec::with_capacity(m1);
    for c in &candidates.scales {
        match fit_scale_obs(&obs, &c.function, &c.domain, opts) {
            Ok(fit) => {
                qbic1.push(qbic_scale(fit.g1, c.dim(), n));
                scale_fits.push(Some(fit));
            }
            Err(e) => {
                excluded.push(format!("scale {}: {e}", c.label()));
                qbic1.push(f64::INFINITY);
                scale_fits.push(None);
            }
        }
    }
    let scale_dims: Vec<usize> = candidates.scales.iter().map(|c| c.dim()).collect();
    let selected_scale = argmin_with_ties(&qbic1, &scale_dims)
        .ok_or_else(|| Error::OptimizationFailure(format!("every scale candidate failed: {}", excluded.join("; "))))?;

    let mut qbic2 = vec![vec![f64::INFINITY; m2]; m1];
    let mut drift_fits = vec![vec![None; m2]; m1];
    for (k, sf) in scale_fits.iter().enumerate() {
        let Some(sf) = sf else { continue };
        let scale = &candidates.scales[k];
        let weights = match obs.drift_weights(&scale.function, &sf.gamma_hat) {
            Ok(w) => w,
            Err(e) => {
                excluded.push(format!("drift row {}: {e}", scale.label()));
                continue;
            }
        };
        for (l, d) in candidates.drifts.iter().enumerate() {
            match fit_drift_weighted(&obs, &weights, &d.function, &d.domain, opts) {
                Ok(fit) => {
                    qbic2[k][l] = qbic_drift(fit.g2, d.dim(), horizon)?;
                    drift_fits[k][l] = Some(fit);
                }
                Err(e) => excluded.push(format!("drift {} | {}: {e}", d.label(), scale.label())),
            }
        }
    }
    let drift_dims: Vec<usize> = candidates.drifts.iter().map(|c| c.dim()).collect();
    let selected_drift = argmin_with_ties(&qbic2[selected_scale], &drift_dims)
        .ok_or_else(|| Error::OptimizationFailure(format!("every drift candidate failed: {}", excluded.join("; "))))?;

    let half1: Vec<f64> = qbic1.iter().map(|q| 0.5 * q).collect();
    let half2: Vec<Vec<f64>> = qbic2.iter().map(|r| r.iter().map(|q| 0.5 * q).collect()).collect();
    let weights = model_weights(&half1, &half2)?;

    Ok(QbicReport {
        scale_labels: candidates.scale_labels(),
        drift_labels: candidates.drift_labels(),
        qbic1,
        qbic2,
        selected_scale,
        selected_drift,
        weights,
        scale_fits,
        drift_fits,
        excluded,
    })
}
