//! Driving-noise increments: standard Wiener and normal inverse Gaussian.
//!
//! NIG uses the `(α, β, δ, μ)` parametrization with linear time scaling, so
//! `Z_t ~ NIG(α, β, δ t, μ t)`. Increments are drawn exactly in law through
//! the normal variance-mean mixture `μ h + β V + √V ξ` with
//! `V ~ IG(δ h / γ̄, (δ h)²)`, `γ̄ = √(α² − β²)`.
//!
//! Every generator is ChaCha8 keyed by `(seed, stream_id)`: the seed goes
//! through `SeedableRng::seed_from_u64` and the stream id selects the ChaCha
//! stream, so output is identical on every platform and independent of
//! thread scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SamplingScheme;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NoiseSpec {
    Wiener,
    Nig {
        alpha: f64,
        beta: f64,
        delta_rate: f64,
        mu_rate: f64,
    },
}

impl NoiseSpec {
    /// The NIG(3, 0, 3t, 0) process: mean 0 and unit variance per unit time.
    pub fn standard_nig() -> Self {
        NoiseSpec::Nig { alpha: 3.0, beta: 0.0, delta_rate: 3.0, mu_rate: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if let NoiseSpec::Nig { alpha, beta, delta_rate, mu_rate } = *self {
            if !(alpha.is_finite() && beta.is_finite() && delta_rate.is_finite() && mu_rate.is_finite()) {
                return Err(Error::invalid("NIG parameters must be finite"));
            }
            if !(alpha > beta.abs()) {
                return Err(Error::invalid(format!("NIG needs alpha > |beta|, got ({alpha}, {beta})")));
            }
            if !(delta_rate > 0.0) {
                return Err(Error::invalid(format!("NIG needs delta_rate > 0, got {delta_rate}")));
            }
        }
        Ok(())
    }

    /// `E[Z_1]`.
    pub fn mean_rate(&self) -> f64 {
        match *self {
            NoiseSpec::Wiener => 0.0,
            NoiseSpec::Nig { alpha, beta, delta_rate, mu_rate } => {
                mu_rate + delta_rate * beta / (alpha * alpha - beta * beta).sqrt()
            }
        }
    }

    /// `Var[Z_1]`.
    pub fn variance_rate(&self) -> f64 {
        match *self {
            NoiseSpec::Wiener => 1.0,
            NoiseSpec::Nig { alpha, beta, delta_rate, .. } => {
                let g = (alpha * alpha - beta * beta).sqrt();
                delta_rate * alpha * alpha / (g * g * g)
            }
        }
    }

    /// Excess kurtosis of `Z_t`.
    pub fn excess_kurtosis(&self, t: f64) -> f64 {
        match *self {
            NoiseSpec::Wiener => 0.0,
            NoiseSpec::Nig { alpha, beta, delta_rate, .. } => {
                let g = (alpha * alpha - beta * beta).sqrt();
                3.0 * (1.0 + 4.0 * beta * beta / (alpha * alpha)) / (delta_rate * t * g)
            }
        }
    }

    /// `true` when `E[Z_1] = 0` and `E[Z_1²] = 1` within `tol`.
    pub fn is_standardized(&self, tol: f64) -> bool {
        let m = self.mean_rate();
        (m.abs() <= tol) && ((self.variance_rate() + m * m) - 1.0).abs() <= tol
    }

    pub fn describe(&self) -> String {
        match *self {
            NoiseSpec::Wiener => "wiener".to_string(),
            NoiseSpec::Nig { alpha, beta, delta_rate, mu_rate } => {
                format!("nig({alpha},{beta},{delta_rate}t,{mu_rate}t)")
            }
        }
    }
}

/// Reproducible random stream identified by `(seed, stream_id)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    pub fn generator(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }

    /// Stream for replicate `replicate` of the scheme `(h, T)` in the
    /// experiment tagged `tag`. Adding schemes or replicates never changes the
    /// streams of existing ones.
    pub fn for_replicate(seed: u64, tag: &str, h: f64, horizon: f64, replicate: u64) -> Self {
        let mut id = fnv1a(tag.as_bytes());
        for word in [h.to_bits(), horizon.to_bits(), replicate] {
            id = splitmix64(id ^ word);
        }
        Self { seed, stream_id: id }
    }

    /// A different, deterministic stream derived from this one.
    pub fn child(&self, index: u64) -> Self {
        Self { seed: self.seed, stream_id: splitmix64(self.stream_id ^ splitmix64(index.wrapping_add(1))) }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ *b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Per-step sampler for a fixed noise law and step size.
#[derive(Debug, Clone, Copy)]
pub(crate) enum IncrementSampler {
    Wiener { sd: f64 },
    Nig { ig_mean: f64, ig_shape: f64, beta: f64, drift: f64 },
}

impl IncrementSampler {
    pub(crate) fn new(spec: &NoiseSpec, dt: f64) -> Result<Self> {
        spec.validate()?;
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::invalid(format!("step must be positive, got {dt}")));
        }
        Ok(match *spec {
            NoiseSpec::Wiener => IncrementSampler::Wiener { sd: dt.sqrt() },
            NoiseSpec::Nig { alpha, beta, delta_rate, mu_rate } => {
                let g = (alpha * alpha - beta * beta).sqrt();
                let delta = delta_rate * dt;
                IncrementSampler::Nig { ig_mean: delta / g, ig_shape: delta * delta, beta, drift: mu_rate * dt }
            }
        })
    }

    #[inline]
    pub(crate) fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            IncrementSampler::Wiener { sd } => sd * rng.sample::<f64, _>(StandardNormal),
            IncrementSampler::Nig { ig_mean, ig_shape, beta, drift } => {
                let v = ig_draw(ig_mean, ig_shape, rng);
                drift + beta * v + v.sqrt() * rng.sample::<f64, _>(StandardNormal)
            }
        }
    }
}

/// Michael–Schucany–Haas transform, written in a cancellation-free form:
/// the smaller root is `μ / (1 + r + √(r² + 2r))` with `r = μ ν² / (2λ)`.
#[inline]
fn ig_draw<R: Rng + ?Sized>(mean: f64, shape: f64, rng: &mut R) -> f64 {
    let nu: f64 = rng.sample(StandardNormal);
    let r = mean * nu * nu / (2.0 * shape);
    let x = mean / (1.0 + r + (r * r + 2.0 * r).sqrt());
    let u: f64 = rng.random();
    if u * (mean + x) <= mean {
        x
    } else {
        mean * mean / x
    }
}

/// One draw from `InverseGaussian(mean, shape)`.
pub fn inverse_gaussian_sample<R: Rng + ?Sized>(mean: f64, shape: f64, rng: &mut R) -> Result<f64> {
    if !(mean.is_finite() && mean > 0.0 && shape.is_finite() && shape > 0.0) {
        return Err(Error::invalid(format!("inverse Gaussian needs mean, shape > 0, got ({mean}, {shape})")));
    }
    Ok(ig_draw(mean, shape, rng))
}

/// `n` i.i.d. `N(0, h)` draws.
pub fn wiener_increments(scheme: &SamplingScheme, rng: &RngStream) -> Vec<f64> {
    let sampler = IncrementSampler::Wiener { sd: scheme.h().sqrt() };
    let mut g = rng.generator();
    (0..scheme.n()).map(|_| sampler.sample(&mut g)).collect()
}

/// `n` i.i.d. draws of `Z_h` for an NIG spec.
pub fn nig_increments(spec: &NoiseSpec, scheme: &SamplingScheme, rng: &RngStream) -> Result<Vec<f64>> {
    if matches!(spec, NoiseSpec::Wiener) {
        return Err(Error::invalid("nig_increments called with a Wiener spec"));
    }
    increments(spec, scheme, rng)
}

/// Increments of any supported noise over the scheme's grid.
pub fn increments(spec: &NoiseSpec, scheme: &SamplingScheme, rng: &RngStream) -> Result<Vec<f64>> {
    let sampler = IncrementSampler::new(spec, scheme.h())?;
    let mut g = rng.generator();
    Ok((0..scheme.n()).map(|_| sampler.sample(&mut g)).collect())
}
