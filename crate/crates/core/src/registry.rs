//! Named candidate coefficients and the two shipped experiments.
//!
//! | name          | coefficient                                   | box             |
//! |---------------|-----------------------------------------------|-----------------|
//! | `scale1`      | `exp{(γ₁ + γ₂x + x²)/(1+x²)}`                 | `[-10, 10]²`    |
//! | `scale2`      | `exp{(γ₁ + x + γ₂x²)/(1+x²)}`                 | `[-10, 10]²`    |
//! | `scale3`      | `exp{(1 + γ₁x + γ₂x²)/(1+x²)}`                | `[-10, 10]²`    |
//! | `scale4`      | `exp{(1 + γx)/(1+x²)}`                        | `[-10, 10]`     |
//! | `scale5`      | `exp{(1 + γx²)/(1+x²)}`                       | `[-10, 10]`     |
//! | `scale6`      | `exp{(γx + x²)/(1+x²)}`                       | `[-10, 10]`     |
//! | `scale7`      | `exp{(x + γx²)/(1+x²)}`                       | `[-10, 10]`     |
//! | `drift1`      | `-α(x - 1)`                                   | `[-10, 10]`     |
//! | `drift2`      | `-αx - 1`                                     | `[-10, 10]`     |
//! | `drift3`      | `-α`                                          | `[-10, 10]`     |
//! | `levy-scale1` | `γ`                                           | `[1e-3, 10]`    |
//! | `levy-scale2` | `exp{(γ₁ cos x + γ₂ sin x)/2}`                | `[-10, 10]²`    |
//! | `levy-scale3` | `γ/(1+x²)`                                    | `[1e-3, 10]`    |
//! | `levy-scale4` | `(1 + γx²)/(1+x²)`                            | `[0, 10]`       |
//! | `levy-drift1` | `-α₁x - α₂`                                   | `[-10, 10]²`    |
//! | `levy-drift2` | `-αx`                                         | `[-10, 10]`     |
//! | `levy-drift3` | `-α`                                          | `[-10, 10]`     |
//!
//! The positive lower bounds keep the Lévy scales away from zero.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::limits::{EmpiricalRecipe, StationaryDistribution};
use crate::model::{BasisFn, Candidate, CandidateSet, CoefficientFunction, LinearBasis, ParameterDomain};
use crate::noise::NoiseSpec;
use crate::simulate::TrueModel;

pub const DIFFUSION_EXPERIMENT: &str = "diffusion-4.1";
pub const LEVY_EXPERIMENT: &str = "nig-4.2";

const BOX: f64 = 10.0;

fn rational(numerator: fn(f64) -> f64) -> Arc<BasisFn> {
    Arc::new(move |x| numerator(x) / (1.0 + x * x))
}

/// `c = exp{(φ₀(x) + Σ γ_k φ_k(x)) / (1 + x²)}` with analytic derivatives.
fn exp_rational(name: &str, offset: fn(f64) -> f64, terms: &[fn(f64) -> f64]) -> CoefficientFunction {
    let basis = LinearBasis::new(terms.iter().map(|t| rational(*t)).collect(), Some(rational(offset)));
    let p = terms.len();
    let (b_val, b_log, b_grad, b_hess) = (basis.clone(), basis.clone(), basis.clone(), basis);
    CoefficientFunction::new(name, p, move |x, g| b_val.evaluate(x, g).exp())
        .with_log_abs(move |x, g| b_log.evaluate(x, g))
        .with_gradient(move |x, g, out| {
            let c = b_grad.evaluate(x, g).exp();
            for (k, o) in out.iter_mut().enumerate() {
                *o = c * b_grad.term(k, x);
            }
        })
        .with_hessian(move |x, g, out| {
            let c = b_hess.evaluate(x, g).exp();
            for a in 0..p {
                for b in 0..p {
                    out[a * p + b] = c * b_hess.term(a, x) * b_hess.term(b, x);
                }
            }
        })
}

fn linear(name: &str, offset: Option<fn(f64) -> f64>, terms: &[fn(f64) -> f64]) -> CoefficientFunction {
    let terms: Vec<Arc<BasisFn>> = terms.iter().map(|t| Arc::new(*t) as Arc<BasisFn>).collect();
    CoefficientFunction::linear(name, LinearBasis::new(terms, offset.map(|f| Arc::new(f) as Arc<BasisFn>)))
}

fn cube(dim: usize) -> ParameterDomain {
    ParameterDomain::cube(dim, -BOX, BOX).expect("valid box")
}

fn interval(lo: f64, hi: f64) -> ParameterDomain {
    ParameterDomain::new(vec![lo], vec![hi]).expect("valid box")
}

fn with_box(f: CoefficientFunction, domain: ParameterDomain) -> Candidate {
    Candidate::new(f, domain).expect("registry dimensions agree")
}

/// Candidate by registry name.
pub fn candidate(name: &str) -> Result<Candidate> {
    let c = match name {
        "scale1" => with_box(exp_rational(name, |x| x * x, &[|_| 1.0, |x| x]), cube(2)),
        "scale2" => with_box(exp_rational(name, |x| x, &[|_| 1.0, |x| x * x]), cube(2)),
        "scale3" => with_box(exp_rational(name, |_| 1.0, &[|x| x, |x| x * x]), cube(2)),
        "scale4" => with_box(exp_rational(name, |_| 1.0, &[|x| x]), cube(1)),
        "scale5" => with_box(exp_rational(name, |_| 1.0, &[|x| x * x]), cube(1)),
        "scale6" => with_box(exp_rational(name, |x| x * x, &[|x| x]), cube(1)),
        "scale7" => with_box(exp_rational(name, |x| x, &[|x| x * x]), cube(1)),
        "drift1" => with_box(linear(name, None, &[|x| 1.0 - x]), cube(1)),
        "drift2" => with_box(linear(name, Some(|_| -1.0), &[|x| -x]), cube(1)),
        "drift3" | "levy-drift3" => with_box(linear(name, None, &[|_| -1.0]), cube(1)),
        "levy-scale1" => with_box(
            CoefficientFunction::new(name, 1, |_, g| g[0])
                .with_gradient(|_, _, out| out[0] = 1.0)
                .with_hessian(|_, _, out| out[0] = 0.0),
            interval(1e-3, BOX),
        ),
        "levy-scale2" => with_box(
            CoefficientFunction::new(name, 2, |x, g| (0.5 * (g[0] * x.cos() + g[1] * x.sin())).exp())
                .with_log_abs(|x, g| 0.5 * (g[0] * x.cos() + g[1] * x.sin()))
                .with_gradient(|x, g, out| {
                    let c = (0.5 * (g[0] * x.cos() + g[1] * x.sin())).exp();
                    out[0] = 0.5 * c * x.cos();
                    out[1] = 0.5 * c * x.sin();
                })
                .with_hessian(|x, g, out| {
                    let c = (0.5 * (g[0] * x.cos() + g[1] * x.sin())).exp();
                    let (s, co) = x.sin_cos();
                    out[0] = 0.25 * c * co * co;
                    out[1] = 0.25 * c * co * s;
                    out[2] = out[1];
                    out[3] = 0.25 * c * s * s;
                }),
            cube(2),
        ),
        "levy-scale3" => with_box(
            CoefficientFunction::new(name, 1, |x, g| g[0] / (1.0 + x * x))
                .with_gradient(|x, _, out| out[0] = 1.0 / (1.0 + x * x))
                .with_hessian(|_, _, out| out[0] = 0.0),
            interval(1e-3, BOX),
        ),
        "levy-scale4" => with_box(
            CoefficientFunction::new(name, 1, |x, g| (1.0 + g[0] * x * x) / (1.0 + x * x))
                .with_gradient(|x, _, out| out[0] = x * x / (1.0 + x * x))
                .with_hessian(|_, _, out| out[0] = 0.0),
            interval(0.0, BOX),
        ),
        "levy-drift1" => with_box(linear(name, None, &[|x| -x, |_| -1.0]), cube(2)),
        "levy-drift2" => with_box(linear(name, None, &[|x| -x]), cube(1)),
        _ => return Err(Error::UnknownName(name.to_string())),
    };
    Ok(c)
}

pub fn candidates(names: &[&str]) -> Result<Vec<Candidate>> {
    names.iter().map(|n| candidate(n)).collect()
}

pub const DIFFUSION_SCALES: [&str; 7] = ["scale1", "scale2", "scale3", "scale4", "scale5", "scale6", "scale7"];
pub const DIFFUSION_DRIFTS: [&str; 3] = ["drift1", "drift2", "drift3"];
pub const LEVY_SCALES: [&str; 4] = ["levy-scale1", "levy-scale2", "levy-scale3", "levy-scale4"];
pub const LEVY_DRIFTS: [&str; 3] = ["levy-drift1", "levy-drift2", "levy-drift3"];

/// How the stationary law of an experiment is obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StationaryRecipe {
    StandardNormal,
    Simulated(EmpiricalRecipe),
}

impl StationaryRecipe {
    pub fn build(&self, truth: &TrueModel) -> Result<StationaryDistribution> {
        match self {
            Self::StandardNormal => Ok(StationaryDistribution::standard_normal()),
            Self::Simulated(r) => StationaryDistribution::simulate(truth, r),
        }
    }
}

/// A named experiment: truth, candidates, stationary law and default schemes.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub name: String,
    pub truth: TrueModel,
    pub candidates: CandidateSet,
    pub stationary: StationaryRecipe,
    pub schemes: Vec<(f64, f64)>,
}

pub fn experiment_names() -> [&'static str; 2] {
    [DIFFUSION_EXPERIMENT, LEVY_EXPERIMENT]
}

/// The true model of a named experiment.
pub fn truth(name: &str) -> Result<TrueModel> {
    match name {
        DIFFUSION_EXPERIMENT => Ok(TrueModel::new(name, |x| -0.5 * x, |_| 1.0, NoiseSpec::Wiener, 0.0)),
        LEVY_EXPERIMENT => Ok(TrueModel::new(name, |x| -0.5 * x, |x| 1.0 / (1.0 + x * x), NoiseSpec::standard_nig(), 0.0)),
        _ => Err(Error::UnknownName(name.to_string())),
    }
}

pub fn experiment(name: &str) -> Result<Experiment> {
    let schemes = vec![(0.01, 10.0), (0.005, 10.0), (0.01, 50.0), (0.005, 50.0)];
    let (scales, drifts, stationary): (&[&str], &[&str], _) = match name {
        DIFFUSION_EXPERIMENT => (&DIFFUSION_SCALES, &DIFFUSION_DRIFTS, StationaryRecipe::StandardNormal),
        LEVY_EXPERIMENT => (&LEVY_SCALES, &LEVY_DRIFTS, StationaryRecipe::Simulated(EmpiricalRecipe::default())),
        _ => return Err(Error::UnknownName(name.to_string())),
    };
    Ok(Experiment {
        name: name.to_string(),
        truth: truth(name)?,
        candidates: CandidateSet::new(candidates(scales)?, candidates(drifts)?)?,
        stationary,
        schemes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const ALL: [&str; 17] = [
        "scale1", "scale2", "scale3", "scale4", "scale5", "scale6", "scale7", "drift1", "drift2", "drift3", "levy-scale1",
        "levy-scale2", "levy-scale3", "levy-scale4", "levy-drift1", "levy-drift2", "levy-drift3",
    ];

    #[test]
    fn formulas() {
        let c = candidate("scale1").unwrap();
        let x: f64 = 0.7;
        let v = c.function.evaluate(x, &[0.3, -0.2]);
        assert!((v - ((0.3 - 0.2 * x + x * x) / (1.0 + x * x)).exp()).abs() < 1e-15);
        let v = candidate("scale7").unwrap().function.evaluate(x, &[2.0]);
        assert!((v - ((x + 2.0 * x * x) / (1.0 + x * x)).exp()).abs() < 1e-15);
        assert_eq!(candidate("drift1").unwrap().function.evaluate(3.0, &[2.0]), -4.0);
        assert_eq!(candidate("drift2").unwrap().function.evaluate(3.0, &[2.0]), -7.0);
        assert_eq!(candidate("drift3").unwrap().function.evaluate(3.0, &[2.0]), -2.0);
        assert_eq!(candidate("levy-drift1").unwrap().function.evaluate(3.0, &[2.0, 1.0]), -7.0);
        assert_eq!(candidate("levy-scale4").unwrap().function.evaluate(1.0, &[3.0]), 2.0);
        assert!(matches!(candidate("scale8"), Err(Error::UnknownName(_))));
    }

    #[test]
    fn analytic_derivatives_match_finite_differences() {
        let xs = [-2.5, -0.3, 0.0, 0.8, 3.0];
        for name in ALL {
            let c = candidate(name).unwrap();
            let p = c.dim();
            let theta: Vec<f64> = (0..p).map(|k| 0.4 + 0.3 * k as f64).collect();
            let fd = CoefficientFunction::new("fd", p, {
                let f = c.function.clone();
                move |x, t| f.evaluate(x, t)
            });
            for &x in &xs {
                let a = c.function.gradient(x, &theta);
                let b = fd.gradient(x, &theta);
                for k in 0..p {
                    assert!((a[k] - b[k]).abs() < 1e-7 * (1.0 + a[k].abs()), "{name} grad at {x}");
                }
                let a = c.function.hessian(x, &theta);
                let b = fd.hessian(x, &theta);
                for k in 0..p * p {
                    assert!((a[k] - b[k]).abs() < 1e-4 * (1.0 + a[k].abs()), "{name} hessian at {x}");
                }
                if !name.contains("scale") {
                    continue;
                }
                let l = c.function.log_abs(x, &theta);
                assert!((l - c.function.evaluate(x, &theta).abs().ln()).abs() < 1e-12, "{name} log at {x}");
            }
        }
    }

    #[test]
    fn drifts_declare_valid_linear_bases() {
        let xs: Vec<f64> = (-5..=5).map(|i| i as f64 * 0.7).collect();
        for name in ["drift1", "drift2", "drift3", "levy-drift1", "levy-drift2", "levy-drift3"] {
            let c = candidate(name).unwrap();
            assert!(c.function.is_linear_in_params());
            let thetas = vec![vec![0.3; c.dim()], vec![-1.7; c.dim()]];
            assert!(c.function.linear_declaration_holds(&xs, &thetas, 1e-12));
        }
    }

    #[test]
    fn experiments_are_complete() {
        let e = experiment(DIFFUSION_EXPERIMENT).unwrap();
        assert_eq!(e.candidates.scales.len(), 7);
        assert_eq!(e.candidates.drifts.len(), 3);
        assert_eq!(e.truth.drift_at(2.0), -1.0);
        let e = experiment(LEVY_EXPERIMENT).unwrap();
        assert_eq!(e.candidates.scales.len(), 4);
        assert_eq!(e.truth.scale_at(1.0), 0.5);
        assert!(e.truth.noise.is_standardized(1e-12));
        assert!(experiment("nope").is_err());
    }

    #[test]
    fn levy_scales_do_not_vanish_on_their_boxes() {
        let rng = crate::noise::RngStream::new(1, 2);
        for name in LEVY_SCALES {
            let c = candidate(name).unwrap();
            crate::model::check_nonvanishing(&c.function, &c.domain, 200, 20.0, &rng).unwrap();
        }
    }
}
