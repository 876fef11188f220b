//! Gauss–Hermite and Gauss–Legendre rules, plus adaptive Gauss–Kronrod on
//! the real line.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Nodes and weights of a one-dimensional rule.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn apply<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(x, w)| w * f(*x)).sum()
    }
}

/// Physicists' Gauss–Hermite rule for `∫ f(x) e^{-x²} dx`.
///
/// Nodes start from the eigenvalues of the Jacobi matrix and are polished by
/// Newton steps on the orthonormal Hermite recurrence, which also gives the
/// weights.
pub fn gauss_hermite(n: usize) -> Result<Rule> {
    if n == 0 {
        return Err(Error::invalid("Gauss–Hermite needs at least one node"));
    }
    let jacobi = DMatrix::from_fn(n, n, |i, j| if i.abs_diff(j) == 1 { (i.max(j) as f64 / 2.0).sqrt() } else { 0.0 });
    let mut guesses: Vec<f64> = jacobi.symmetric_eigenvalues().iter().copied().collect();
    guesses.sort_by(|a, b| b.total_cmp(a));

    let pim4 = PI.powf(-0.25);
    let nf = n as f64;
    // (p_n(z), sqrt(2n) p_{n-1}(z)) for the orthonormal polynomials
    let eval = |z: f64| {
        let mut p1 = pim4;
        let mut p2 = 0.0;
        for j in 0..n {
            let p3 = p2;
            p2 = p1;
            let jf = j as f64;
            p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
        }
        (p1, (2.0 * nf).sqrt() * p2)
    };
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = if n % 2 == 1 && i == m - 1 { 0.0 } else { guesses[i] };
        let mut pp = eval(z).1;
        for _ in 0..3 {
            let (p1, d) = eval(z);
            pp = d;
            let step = p1 / d;
            z -= step;
            if step.abs() <= 1e-15 * (1.0 + z.abs()) {
                pp = eval(z).1;
                break;
            }
        }
        if !z.is_finite() || !pp.is_finite() {
            return Err(Error::Numeric { message: format!("Gauss–Hermite node {i} of {n} is not finite"), residual: f64::NAN });
        }
        nodes[i] = z;
        nodes[n - 1 - i] = -z;
        weights[i] = 2.0 / (pp * pp);
        weights[n - 1 - i] = weights[i];
    }
    Ok(Rule { nodes, weights })
}

/// Rule for `E[f(X)]`, `X ~ N(mean, sd²)`.
pub fn gaussian_expectation_rule(n: usize, mean: f64, sd: f64) -> Result<Rule> {
    let gh = gauss_hermite(n)?;
    let norm = PI.sqrt();
    Ok(Rule {
        nodes: gh.nodes.iter().map(|x| mean + sd * std::f64::consts::SQRT_2 * x).collect(),
        weights: gh.weights.iter().map(|w| w / norm).collect(),
    })
}

/// Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> Result<Rule> {
    if n == 0 {
        return Err(Error::invalid("Gauss–Legendre needs at least one node"));
    }
    let nf = n as f64;
    let m = n.div_ceil(2);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = ((2.0 * jf + 1.0) * z * p2 - jf * p3) / (jf + 1.0);
            }
            pp = nf * (z * p1 - p2) / (z * z - 1.0);
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 {
                break;
            }
        }
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        weights[i] = 2.0 / ((1.0 - z * z) * pp * pp);
        weights[n - 1 - i] = weights[i];
    }
    Ok(Rule { nodes, weights })
}

/// Gauss–Legendre rule mapped onto `[a, b]`.
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> Result<Rule> {
    let base = gauss_legendre(n)?;
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    Ok(Rule {
        nodes: base.nodes.iter().map(|x| mid + half * x).collect(),
        weights: base.weights.iter().map(|w| w * half).collect(),
    })
}

const KRONROD_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const KRONROD_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_8,
];
/// Weights of the embedded 7-point Gauss rule (odd Kronrod indices).
const GAUSS_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let fc = f(mid);
    let mut kronrod = KRONROD_WEIGHTS[7] * fc;
    let mut gauss = GAUSS_WEIGHTS[3] * fc;
    for (j, (&x, &w)) in KRONROD_NODES[..7].iter().zip(&KRONROD_WEIGHTS[..7]).enumerate() {
        let s = f(mid - half * x) + f(mid + half * x);
        kronrod += w * s;
        if j % 2 == 1 {
            gauss += GAUSS_WEIGHTS[j / 2] * s;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

/// Adaptive G7–K15 on `[a, b]` with global error control.
pub fn adaptive_integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: f64, max_intervals: usize) -> Result<f64> {
    let (v, e) = gk15(&mut f, a, b);
    let mut pieces = vec![(a, b, v, e)];
    loop {
        let total: f64 = pieces.iter().map(|p| p.2).sum();
        let err: f64 = pieces.iter().map(|p| p.3).sum();
        if !total.is_finite() {
            return Err(Error::Numeric { message: "integrand is not finite".into(), residual: err });
        }
        if err <= tol.max(tol * total.abs()) {
            return Ok(total);
        }
        if pieces.len() >= max_intervals {
            return Err(Error::Numeric { message: "adaptive quadrature did not converge".into(), residual: err });
        }
        let (idx, _) = pieces
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("non-empty");
        let (lo, hi, _, _) = pieces.swap_remove(idx);
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = gk15(&mut f, lo, mid);
        let (v2, e2) = gk15(&mut f, mid, hi);
        pieces.push((lo, mid, v1, e1));
        pieces.push((mid, hi, v2, e2));
    }
}

/// `∫_ℝ f` through the substitution `x = t / (1 - t²)`.
pub fn integrate_real_line<F: FnMut(f64) -> f64>(mut f: F, tol: f64) -> Result<f64> {
    adaptive_integrate(
        |t| {
            let d = 1.0 - t * t;
            if d <= 0.0 {
                return 0.0;
            }
            let x = t / d;
            let v = f(x) * (1.0 + t * t) / (d * d);
            if v.is_finite() { v } else { 0.0 }
        },
        -1.0,
        1.0,
        tol,
        2000,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermite_rule_integrates_gaussian_moments() {
        for n in [1usize, 2, 5, 20, 201, 402] {
            let r = gaussian_expectation_rule(n, 0.0, 1.0).unwrap();
            assert!((r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12, "n = {n}");
            if n >= 3 {
                assert!((r.apply(|x| x * x) - 1.0).abs() < 1e-12);
                assert!((r.apply(|x| x.powi(4)) - 3.0).abs() < 1e-11);
            }
        }
        let r = gaussian_expectation_rule(201, 0.0, 1.0).unwrap();
        assert!((r.apply(|x| x.cos()) - (-0.5f64).exp()).abs() < 1e-13);
    }

    #[test]
    fn hermite_nodes_are_sorted_and_symmetric() {
        let r = gauss_hermite(201).unwrap();
        assert!(r.nodes.windows(2).all(|w| w[0] > w[1]) || r.nodes.windows(2).all(|w| w[0] < w[1]));
        for i in 0..201 {
            assert!((r.nodes[i] + r.nodes[200 - i]).abs() < 1e-12);
        }
        assert!(r.nodes[100].abs() < 1e-14);
    }

    #[test]
    fn legendre_rule_is_exact_for_polynomials() {
        let r = gauss_legendre_on(5, 0.0, 2.0).unwrap();
        // exact up to degree 9
        assert!((r.apply(|x| x.powi(9)) - 2f64.powi(10) / 10.0).abs() < 1e-10);
        assert!((r.weights.iter().sum::<f64>() - 2.0).abs() < 1e-14);
        let r = gauss_legendre(128).unwrap();
        assert!((r.apply(|x| x.exp()) - (1f64.exp() - (-1f64).exp())).abs() < 1e-13);
    }

    #[test]
    fn adaptive_integration() {
        let v = adaptive_integrate(|x| x.sqrt(), 0.0, 1.0, 1e-12, 500).unwrap();
        assert!((v - 2.0 / 3.0).abs() < 1e-10);
        let v = integrate_real_line(|x| (-x * x / 2.0).exp() / (2.0 * PI).sqrt(), 1e-12).unwrap();
        assert!((v - 1.0).abs() < 1e-10);
        let v = integrate_real_line(|x| 1.0 / (PI * (1.0 + x * x)), 1e-10).unwrap();
        assert!((v - 1.0).abs() < 1e-8);
        assert!(adaptive_integrate(|x| 1.0 / x, 0.0, 1.0, 1e-12, 50).is_err());
    }
}
