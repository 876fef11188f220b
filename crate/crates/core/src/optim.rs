//! Box-constrained multistart Nelder–Mead maximization.
//!
//! Every trial point is projected onto the box before evaluation. Starts are
//! the box centre followed by Halton points in the interior. The reported
//! maximizer is the best point ever evaluated across all starts, so the
//! returned value dominates every probed value.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParameterDomain;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimOptions {
    /// Quasi-random interior starts in addition to the box centre.
    pub quasi_random_starts: usize,
    /// Evaluation budget per start.
    pub max_evals_per_start: usize,
    /// Converged once the simplex diameter is below `tol (1 + |θ_best|)`.
    pub tol: f64,
    /// Relative (to the box width) distance that counts as touching a face.
    pub boundary_tol: f64,
    /// Initial simplex edge as a fraction of each box width.
    pub initial_step: f64,
}

impl Default for OptimOptions {
    fn default() -> Self {
        Self { quasi_random_starts: 8, max_evals_per_start: 2000, tol: 1e-8, boundary_tol: 1e-6, initial_step: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimOutcome {
    pub argmax: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    /// Starts run in total (centre included).
    pub restarts: usize,
    /// Starts that met the simplex-diameter criterion.
    pub converged_starts: usize,
    pub converged: bool,
    pub boundary_contact: bool,
    /// Number of distinct end points (≥ 1e-4 apart) whose values are within
    /// 1e-8 of the best.
    pub multiplicity: usize,
}

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

/// Radical inverse of `index` in `base`.
fn radical_inverse(mut index: usize, base: usize) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while index > 0 {
        r += f * (index % base) as f64;
        index /= base;
        f *= inv;
    }
    r
}

const PRIMES: [usize; 8] = [2, 3, 5, 7, 11, 13, 17, 19];

/// Starting points: the centre, then `count` Halton points mapped into the box.
pub fn start_points(domain: &ParameterDomain, count: usize) -> Vec<Vec<f64>> {
    let mut starts = vec![domain.center()];
    for i in 1..=count {
        starts.push(
            domain
                .lower()
                .iter()
                .zip(domain.upper())
                .enumerate()
                .map(|(k, (lo, hi))| lo + (hi - lo) * radical_inverse(i, PRIMES[k % PRIMES.len()]))
                .collect(),
        );
    }
    starts
}

struct Tracker<'a, F> {
    f: F,
    domain: &'a ParameterDomain,
    evaluations: usize,
    best: Option<(Vec<f64>, f64)>,
    last_error: Option<Error>,
}

impl<F: FnMut(&[f64]) -> Result<f64>> Tracker<'_, F> {
    /// Objective on the projected point; failures and non-finite values count
    /// as `-inf` so the simplex moves away from them.
    fn eval(&mut self, x: &mut Vec<f64>) -> f64 {
        *x = self.domain.project(x);
        self.evaluations += 1;
        let v = match (self.f)(x) {
            Ok(v) if v.is_finite() => v,
            Ok(v) => {
                self.last_error = Some(Error::OptimizationFailure(format!("objective returned {v} at {x:?}")));
                f64::NEG_INFINITY
            }
            Err(e) => {
                self.last_error = Some(e);
                f64::NEG_INFINITY
            }
        };
        if v > f64::NEG_INFINITY && self.best.as_ref().is_none_or(|(_, b)| v > *b) {
            self.best = Some((x.clone(), v));
        }
        v
    }
}

struct StartResult {
    point: Vec<f64>,
    value: f64,
    converged: bool,
}

fn nelder_mead<F: FnMut(&[f64]) -> Result<f64>>(
    tracker: &mut Tracker<'_, F>,
    start: &[f64],
    opts: &OptimOptions,
) -> StartResult {
    let p = start.len();
    let widths = tracker.domain.widths();
    let budget = tracker.evaluations + opts.max_evals_per_start;

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(p + 1);
    let mut x0 = start.to_vec();
    let f0 = tracker.eval(&mut x0);
    simplex.push((x0.clone(), f0));
    for k in 0..p {
        let mut v = x0.clone();
        let step = opts.initial_step * widths[k];
        v[k] = if v[k] + step <= tracker.domain.upper()[k] { v[k] + step } else { v[k] - step };
        let fv = tracker.eval(&mut v);
        simplex.push((v, fv));
    }

    let mut converged = false;
    loop {
        // descending by value: best first
        simplex.sort_by(|a, b| b.1.total_cmp(&a.1));
        let best = &simplex[0].0;
        let scale = 1.0 + best.iter().map(|v| v * v).sum::<f64>().sqrt();
        let diameter = simplex[1..]
            .iter()
            .map(|(v, _)| v.iter().zip(best).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        if diameter < opts.tol * scale {
            converged = true;
            break;
        }
        if tracker.evaluations >= budget {
            break;
        }

        let worst = simplex[p].1;
        let centroid: Vec<f64> =
            (0..p).map(|k| simplex[..p].iter().map(|(v, _)| v[k]).sum::<f64>() / p as f64).collect();
        let along = |t: f64| -> Vec<f64> {
            centroid.iter().zip(&simplex[p].0).map(|(c, w)| c + t * (c - w)).collect()
        };

        let mut xr = along(REFLECT);
        let fr = tracker.eval(&mut xr);
        if fr > simplex[0].1 {
            let mut xe = along(EXPAND);
            let fe = tracker.eval(&mut xe);
            simplex[p] = if fe > fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr > simplex[p - 1].1 {
            simplex[p] = (xr, fr);
            continue;
        }
        let (xc, fc, accept) = if fr > worst {
            let mut xc = along(CONTRACT);
            let fc = tracker.eval(&mut xc);
            (xc, fc, fc >= fr)
        } else {
            let mut xc = along(-CONTRACT);
            let fc = tracker.eval(&mut xc);
            (xc, fc, fc > worst)
        };
        if accept {
            simplex[p] = (xc, fc);
            continue;
        }
        let anchor = simplex[0].0.clone();
        for item in simplex.iter_mut().skip(1) {
            let mut v: Vec<f64> = anchor.iter().zip(&item.0).map(|(a, x)| a + SHRINK * (x - a)).collect();
            let fv = tracker.eval(&mut v);
            *item = (v, fv);
        }
    }
    simplex.sort_by(|a, b| b.1.total_cmp(&a.1));
    let (point, value) = simplex.swap_remove(0);
    StartResult { point, value, converged }
}

/// Maximizes `f` over the closed box.
pub fn maximize<F>(f: F, domain: &ParameterDomain, opts: &OptimOptions) -> Result<OptimOutcome>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let starts = start_points(domain, opts.quasi_random_starts);
    maximize_from(f, domain, &starts, opts)
}

/// Maximizes `f` from explicit starting points (projected onto the box).
pub fn maximize_from<F>(f: F, domain: &ParameterDomain, starts: &[Vec<f64>], opts: &OptimOptions) -> Result<OptimOutcome>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if starts.is_empty() {
        return Err(Error::invalid("no starting points"));
    }
    let mut tracker = Tracker { f, domain, evaluations: 0, best: None, last_error: None };
    let mut ends = Vec::with_capacity(starts.len());
    for s in starts {
        if s.len() != domain.dim() {
            return Err(Error::invalid(format!("start has dimension {}, domain {}", s.len(), domain.dim())));
        }
        ends.push(nelder_mead(&mut tracker, &domain.project(s), opts));
    }
    let evaluations = tracker.evaluations;
    let Some((argmax, value)) = tracker.best.take() else {
        let why = tracker.last_error.map(|e| e.to_string()).unwrap_or_else(|| "no finite value".into());
        return Err(Error::OptimizationFailure(format!(
            "all {} starts failed after {evaluations} evaluations: {why}",
            starts.len()
        )));
    };
    let converged_starts = ends.iter().filter(|e| e.converged).count();
    let winner_converged = ends
        .iter()
        .any(|e| e.converged && (e.value - value).abs() <= 1e-10 * (1.0 + value.abs()));
    let mut distinct: Vec<&Vec<f64>> = vec![&argmax];
    for e in &ends {
        if value - e.value < 1e-8 && distinct.iter().all(|d| dist(d, &e.point) >= 1e-4) {
            distinct.push(&e.point);
        }
    }
    Ok(OptimOutcome {
        boundary_contact: domain.near_boundary(&argmax, opts.boundary_tol),
        multiplicity: distinct.len(),
        argmax,
        value,
        evaluations,
        restarts: starts.len(),
        converged_starts,
        converged: winner_converged,
    })
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}
