//! The six Genz test functions on `[0, 1]^d`, their integrals, and their
//! transforms `f(x) = h(Φ(x))` to integrands against `N(0, I)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::standard_normal_cdf;

/// Largest dimension for which the subset-sum integrals are enumerated.
pub const MAX_SUBSET_DIM: usize = 20;
pub const DEFAULT_A: f64 = 5.0;
pub const DEFAULT_U: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenzKind {
    Continuous,
    CornerPeak,
    Discontinuous,
    GaussianPeak,
    Oscillatory,
    ProductPeak,
}

impl GenzKind {
    pub const ALL: [GenzKind; 6] = [
        GenzKind::Continuous,
        GenzKind::CornerPeak,
        GenzKind::Discontinuous,
        GenzKind::GaussianPeak,
        GenzKind::Oscillatory,
        GenzKind::ProductPeak,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GenzKind::Continuous => "continuous",
            GenzKind::CornerPeak => "corner_peak",
            GenzKind::Discontinuous => "discontinuous",
            GenzKind::GaussianPeak => "gaussian_peak",
            GenzKind::Oscillatory => "oscillatory",
            GenzKind::ProductPeak => "product_peak",
        }
    }
}

impl fmt::Display for GenzKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GenzKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GenzKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown Genz kind '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenzProblem {
    pub kind: GenzKind,
    pub a: Vec<f64>,
    pub u: Vec<f64>,
}

impl GenzProblem {
    pub fn new(kind: GenzKind, a: Vec<f64>, u: Vec<f64>) -> Result<Self> {
        if a.is_empty() || a.len() != u.len() {
            return Err(Error::InvalidArgument(format!(
                "a and u need the same non-zero length, got {} and {}",
                a.len(),
                u.len()
            )));
        }
        if a.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument("every a_i must be finite and > 0".into()));
        }
        if u.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument("every u_i must lie in [0, 1]".into()));
        }
        Ok(Self { kind, a, u })
    }

    /// `a = (5, …, 5)`, `u = (0.5, …, 0.5)`.
    pub fn with_defaults(kind: GenzKind, d: usize) -> Result<Self> {
        Self::new(kind, vec![DEFAULT_A; d], vec![DEFAULT_U; d])
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }
}

/// `h(y)` for `y ∈ [0, 1]^d`.
pub fn genz_eval(problem: &GenzProblem, y: &[f64]) -> f64 {
    let (a, u) = (&problem.a, &problem.u);
    let d = a.len();
    debug_assert_eq!(y.len(), d);
    let dot = || a.iter().zip(y).map(|(ai, yi)| ai * yi).sum::<f64>();
    match problem.kind {
        GenzKind::Continuous => (-(0..d).map(|i| a[i] * (y[i] - u[i]).abs()).sum::<f64>()).exp(),
        GenzKind::CornerPeak => (1.0 + dot()).powi(-(d as i32) - 1),
        GenzKind::Discontinuous => {
            if (0..d).any(|i| y[i] > u[i]) {
                0.0
            } else {
                dot().exp()
            }
        }
        GenzKind::GaussianPeak => (-(0..d).map(|i| a[i] * a[i] * (y[i] - u[i]).powi(2)).sum::<f64>()).exp(),
        GenzKind::Oscillatory => (2.0 * std::f64::consts::PI * u[0] + dot()).cos(),
        GenzKind::ProductPeak => (0..d).map(|i| 1.0 / (a[i].powi(-2) + (y[i] - u[i]).powi(2))).product(),
    }
}

/// `h(Φ(x))` with `Φ` applied coordinatewise.
pub fn genz_transformed_eval(problem: &GenzProblem, x: &[f64]) -> f64 {
    let y: Vec<f64> = x.iter().map(|v| standard_normal_cdf(*v)).collect();
    genz_eval(problem, &y)
}

/// Signed terms summed in order of decreasing magnitude.
fn ordered_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(|p, q| q.abs().total_cmp(&p.abs()));
    terms.into_iter().sum()
}

/// `Σ_{I ⊆ {1..d}} term(|I|, Σ_{j∈I} a_j)`.
fn subset_terms(a: &[f64], term: impl Fn(usize, f64) -> f64) -> Result<Vec<f64>> {
    let d = a.len();
    if d > MAX_SUBSET_DIM {
        return Err(Error::InvalidArgument(format!(
            "closed-form integral enumerates 2^d subsets; d = {d} exceeds {MAX_SUBSET_DIM}"
        )));
    }
    Ok((0u32..1 << d)
        .map(|mask| {
            let sub: f64 = (0..d).filter(|j| mask >> j & 1 == 1).map(|j| a[j]).sum();
            term(mask.count_ones() as usize, sub)
        })
        .collect())
}

/// Integral of `h` over `[0, 1]^d`, which equals the integral of the
/// transformed function against `N(0, I)`.
pub fn genz_integral(problem: &GenzProblem) -> Result<f64> {
    let (a, u) = (&problem.a, &problem.u);
    let d = a.len();
    let prod_a: f64 = a.iter().product();
    let sum_a: f64 = a.iter().sum();
    Ok(match problem.kind {
        GenzKind::Continuous => (0..d)
            .map(|i| (2.0 - (a[i] * (u[i] - 1.0)).exp() - (-a[i] * u[i]).exp()) / a[i])
            .product(),
        GenzKind::CornerPeak => {
            let terms = subset_terms(a, |k, sub| {
                let sign = if (k + d) % 2 == 0 { 1.0 } else { -1.0 };
                sign / (1.0 + sum_a - sub)
            })?;
            let factorial: f64 = (1..=d).map(|v| v as f64).product();
            ordered_sum(terms) / (factorial * prod_a)
        }
        GenzKind::Discontinuous => (0..d).map(|i| ((a[i] * u[i].min(1.0)).exp() - 1.0) / a[i]).product(),
        GenzKind::GaussianPeak => (0..d)
            .map(|i| {
                std::f64::consts::PI.sqrt() / 2.0 / a[i] * (libm::erf(a[i] * (1.0 - u[i])) - libm::erf(-a[i] * u[i]))
            })
            .product(),
        GenzKind::Oscillatory => {
            let g = |x: f64| match d % 4 {
                1 => x.sin(),
                2 => -x.cos(),
                3 => -x.sin(),
                _ => x.cos(),
            };
            let shift = 2.0 * std::f64::consts::PI * u[0];
            let terms = subset_terms(a, |k, sub| {
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                sign * g(shift + sum_a - sub)
            })?;
            ordered_sum(terms) / prod_a
        }
        GenzKind::ProductPeak => (0..d)
            .map(|i| a[i] * (((1.0 - u[i]) * a[i]).atan() - (-u[i] * a[i]).atan()))
            .product(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_examples() {
        let c = GenzProblem::with_defaults(GenzKind::Continuous, 2).unwrap();
        assert_eq!(genz_eval(&c, &[0.5, 0.5]), 1.0);
        let disc = GenzProblem::with_defaults(GenzKind::Discontinuous, 2).unwrap();
        assert_eq!(genz_eval(&disc, &[0.6, 0.1]), 0.0);
        assert!(genz_eval(&disc, &[0.5, 0.5]) > 0.0);
        let pp = GenzProblem::with_defaults(GenzKind::ProductPeak, 1).unwrap();
        assert!((genz_eval(&pp, &[0.5]) - 25.0).abs() < 1e-12);
        assert!((genz_transformed_eval(&pp, &[0.0]) - 25.0).abs() < 1e-12);
    }

    #[test]
    fn integral_examples() {
        let c = GenzProblem::with_defaults(GenzKind::Continuous, 1).unwrap();
        let expected = (2.0 - 2.0 * (-2.5f64).exp()) / 5.0;
        assert!((genz_integral(&c).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.367167).abs() < 1e-6);
        let pp = GenzProblem::with_defaults(GenzKind::ProductPeak, 1).unwrap();
        assert!((genz_integral(&pp).unwrap() - 11.9029).abs() < 1e-4);
        let cp = GenzProblem::with_defaults(GenzKind::CornerPeak, 1).unwrap();
        assert!((genz_integral(&cp).unwrap() - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn kinds_parse_and_validate() {
        for k in GenzKind::ALL {
            assert_eq!(k.name().parse::<GenzKind>().unwrap(), k);
        }
        assert!("spiky".parse::<GenzKind>().is_err());
        assert!(GenzProblem::new(GenzKind::Continuous, vec![-1.0], vec![0.5]).is_err());
        assert!(GenzProblem::new(GenzKind::Continuous, vec![1.0], vec![1.5]).is_err());
        let big = GenzProblem::with_defaults(GenzKind::CornerPeak, 21).unwrap();
        assert!(genz_integral(&big).is_err());
    }
}
