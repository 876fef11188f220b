//! Path generation for the data-generating model `dX = A(X) dt + C(X-) dZ`.

use std::fmt;
use std::io::{BufRead, Write};
use std::sync::Arc;

use rand_distr::StandardNormal;
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{Path, PathMeta, SamplingScheme};
use crate::noise::{IncrementSampler, NoiseSpec, RngStream};

/// States beyond this magnitude abort the simulation.
pub const BLOWUP_LIMIT: f64 = 1e12;

pub const DEFAULT_REFINE: usize = 10;

pub type StateFn = dyn Fn(f64) -> f64 + Send + Sync;

/// Fully specified data-generating model.
#[derive(Clone)]
pub struct TrueModel {
    pub label: String,
    pub drift: Arc<StateFn>,
    pub scale: Arc<StateFn>,
    pub noise: NoiseSpec,
    pub x0: f64,
}

impl fmt::Debug for TrueModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TrueModel")
            .field("label", &self.label)
            .field("noise", &self.noise)
            .field("x0", &self.x0)
            .finish()
    }
}

impl TrueModel {
    pub fn new<A, C>(label: impl Into<String>, drift: A, scale: C, noise: NoiseSpec, x0: f64) -> Self
    where
        A: Fn(f64) -> f64 + Send + Sync + 'static,
        C: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self { label: label.into(), drift: Arc::new(drift), scale: Arc::new(scale), noise, x0 }
    }

    pub fn drift_at(&self, x: f64) -> f64 {
        (self.drift)(x)
    }

    pub fn scale_at(&self, x: f64) -> f64 {
        (self.scale)(x)
    }

    /// Checks finiteness of both coefficients on `[-range, range]`.
    pub fn check_finite_on_grid(&self, range: f64, points: usize) -> Result<()> {
        for i in 0..=points {
            let x = -range + 2.0 * range * i as f64 / points.max(1) as f64;
            if !(self.drift_at(x).is_finite() && self.scale_at(x).is_finite()) {
                return Err(Error::invalid(format!("{}: coefficient not finite at x = {x}", self.label)));
            }
        }
        Ok(())
    }
}

/// Euler–Maruyama on the fine grid of step `h / refine`, recording every
/// `refine`-th state. The scale multiplies each noise increment at the
/// pre-increment state.
pub fn euler_path(model: &TrueModel, scheme: &SamplingScheme, refine: usize, rng: &RngStream) -> Result<Path> {
    euler_path_with_burn_in(model, scheme, refine, 0.0, rng)
}

/// As [`euler_path`], after discarding an initial stretch of length
/// `burn_in` (rounded to whole fine steps). The returned path starts at the
/// post-burn-in state.
pub fn euler_path_with_burn_in(
    model: &TrueModel,
    scheme: &SamplingScheme,
    refine: usize,
    burn_in: f64,
    rng: &RngStream,
) -> Result<Path> {
    if refine == 0 {
        return Err(Error::invalid("refine must be at least 1"));
    }
    if !(burn_in.is_finite() && burn_in >= 0.0) {
        return Err(Error::invalid(format!("burn-in must be non-negative, got {burn_in}")));
    }
    if !model.x0.is_finite() {
        return Err(Error::invalid("x0 must be finite"));
    }
    let dt = scheme.h() / refine as f64;
    let sampler = IncrementSampler::new(&model.noise, dt)?;
    let mut g = rng.generator();
    let mut x = model.x0;
    let mut step = 0usize;
    let mut advance = |x: &mut f64, g: &mut rand_chacha::ChaCha8Rng| -> Result<()> {
        let dz = sampler.sample(g);
        let next = *x + model.drift_at(*x) * dt + model.scale_at(*x) * dz;
        step += 1;
        if !next.is_finite() || next.abs() > BLOWUP_LIMIT {
            return Err(Error::SimulationBlowup { index: step, state: next });
        }
        *x = next;
        Ok(())
    };

    let burn_steps = (burn_in / dt).round() as usize;
    for _ in 0..burn_steps {
        advance(&mut x, &mut g)?;
    }
    let mut values = Vec::with_capacity(scheme.n() + 1);
    values.push(x);
    for _ in 0..scheme.n() {
        for _ in 0..refine {
            advance(&mut x, &mut g)?;
        }
        values.push(x);
    }
    Ok(Path::new(*scheme, values)?.with_meta(PathMeta {
        seed: rng.seed,
        stream_id: rng.stream_id,
        model: model.label.clone(),
        noise: model.noise.describe(),
    }))
}

/// Exact Gaussian-transition simulation of `dX = -θ X dt + σ dW`.
pub fn exact_ou_path(theta: f64, sigma: f64, scheme: &SamplingScheme, x0: f64, rng: &RngStream) -> Result<Path> {
    if !(theta.is_finite() && theta > 0.0 && sigma.is_finite() && sigma > 0.0 && x0.is_finite()) {
        return Err(Error::invalid(format!("OU needs θ, σ > 0 and finite x0, got ({theta}, {sigma}, {x0})")));
    }
    let decay = (-theta * scheme.h()).exp();
    let sd = sigma * ((1.0 - decay * decay) / (2.0 * theta)).sqrt();
    let mut g = rng.generator();
    let mut values = Vec::with_capacity(scheme.n() + 1);
    let mut x = x0;
    values.push(x);
    for _ in 0..scheme.n() {
        x = x * decay + sd * g.sample::<f64, _>(StandardNormal);
        values.push(x);
    }
    Ok(Path::new(*scheme, values)?.with_meta(PathMeta {
        seed: rng.seed,
        stream_id: rng.stream_id,
        model: format!("ou(theta={theta},sigma={sigma})"),
        noise: "wiener".to_string(),
    }))
}

/// Writes `t,x` rows with a header. Floats use the shortest representation
/// that round-trips.
pub fn write_path_csv<W: Write>(path: &Path, mut out: W) -> Result<()> {
    writeln!(out, "t,x")?;
    for (j, x) in path.values().iter().enumerate() {
        writeln!(out, "{},{}", path.scheme().time(j), x)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a `t,x` CSV written by [`write_path_csv`] or an external
/// simulator. The grid must start at 0 and be equidistant.
pub fn read_path_csv<R: BufRead>(input: R) -> Result<Path> {
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if lineno == 0 {
            if line.replace(' ', "") != "t,x" {
                return Err(Error::Parse(format!("expected header `t,x`, got `{line}`")));
            }
            continue;
        }
        let mut fields = line.split(',');
        let (Some(t), Some(x), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(Error::Parse(format!("line {}: expected two columns", lineno + 1)));
        };
        let parse = |s: &str| {
            s.trim().parse::<f64>().map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))
        };
        times.push(parse(t)?);
        values.push(parse(x)?);
    }
    if times.len() < 3 {
        return Err(Error::Parse("a path needs at least three rows".into()));
    }
    let h = times[1] - times[0];
    if times[0].abs() > 1e-12 || !(h > 0.0) {
        return Err(Error::Parse("time column must start at 0 and increase".into()));
    }
    for (j, t) in times.iter().enumerate() {
        if (t - j as f64 * h).abs() > 1e-9 * (1.0 + t.abs()) {
            return Err(Error::Parse(format!("time grid is not equidistant at row {}", j + 2)));
        }
    }
    let scheme = SamplingScheme::new(values.len() - 1, h)?;
    Path::new(scheme, values)
}
