//! Polynomial integrands `f(x) = Σ_j Π_i α_ji x_i^β_ji` against `N(0, σ² I)`.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::targets::GaussianTarget;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolynomialIntegrand {
    /// `p × d` coefficients.
    pub alpha: Vec<Vec<f64>>,
    /// `p × d` exponents.
    pub beta: Vec<Vec<u32>>,
    pub sigma2: f64,
}

impl PolynomialIntegrand {
    pub fn new(alpha: Vec<Vec<f64>>, beta: Vec<Vec<u32>>, sigma2: f64) -> Result<Self> {
        let p = Self { alpha, beta, sigma2 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha.is_empty() || self.alpha.len() != self.beta.len() {
            return Err(Error::InvalidArgument("alpha and beta need the same non-zero number of terms".into()));
        }
        let d = self.alpha[0].len();
        if d == 0 {
            return Err(Error::InvalidArgument("terms need at least one coordinate".into()));
        }
        for (a, b) in self.alpha.iter().zip(&self.beta) {
            if a.len() != d || b.len() != d {
                return Err(Error::InvalidArgument("every term needs d coefficients and d exponents".into()));
            }
            ensure_finite(a, "polynomial coefficients")?;
        }
        if !(self.sigma2 > 0.0) || !self.sigma2.is_finite() {
            return Err(Error::InvalidArgument(format!("sigma2 = {} must be finite and > 0", self.sigma2)));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.alpha[0].len()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.alpha
            .iter()
            .zip(&self.beta)
            .map(|(a, b)| (0..x.len()).map(|i| a[i] * x[i].powi(b[i] as i32)).product::<f64>())
            .sum()
    }

    /// `N(0, σ² I)`.
    pub fn target(&self) -> Result<GaussianTarget> {
        GaussianTarget::isotropic(vec![0.0; self.dim()], self.sigma2)
    }
}

/// `(n - 1)!!` for even `n`, with `(-1)!! = 1`.
fn double_factorial_odd_below(n: u32) -> f64 {
    let mut out = 1.0;
    let mut k = n as i64 - 1;
    while k > 1 {
        out *= k as f64;
        k -= 2;
    }
    out
}

/// `Σ_j Π_i α_ji · 1{β_ji even} · σ^β_ji · (β_ji - 1)!!`.
pub fn polynomial_integral(integrand: &PolynomialIntegrand) -> f64 {
    let sigma = integrand.sigma2.sqrt();
    integrand
        .alpha
        .iter()
        .zip(&integrand.beta)
        .map(|(a, b)| {
            a.iter()
                .zip(b)
                .map(|(ai, &bi)| {
                    if bi % 2 == 1 {
                        0.0
                    } else {
                        ai * sigma.powi(bi as i32) * double_factorial_odd_below(bi)
                    }
                })
                .product::<f64>()
        })
        .sum()
}
