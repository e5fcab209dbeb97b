//! Integrands drawn from a centered Gaussian process with squared-exponential
//! covariance `c(x, y) = λ² exp(-‖x - y‖² / (2σ²))`, integrated against a
//! Gaussian mixture. The values at the sample points and the integral are
//! drawn jointly, so the true integral of each draw is known.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::samples::ScoredSampleSet;
use crate::targets::{MixtureTarget, Target};

/// Relative jitter `× λ²` on the joint covariance.
pub const DEFAULT_GP_RELATIVE_JITTER: f64 = 1e-10;
const JITTER_ESCALATIONS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpKernel {
    pub lambda: f64,
    pub sigma: f64,
}

impl GpKernel {
    pub fn new(lambda: f64, sigma: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite() && sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "GP amplitude {lambda} and length-scale {sigma} must be finite and > 0"
            )));
        }
        Ok(Self { lambda, sigma })
    }

    pub fn cov(&self, x: &[f64], y: &[f64]) -> f64 {
        let dd: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        self.lambda * self.lambda * (-dd / (2.0 * self.sigma * self.sigma)).exp()
    }

    /// `λ² (√(2π) σ)^d`, the factor turning `c` into a Gaussian density.
    fn scale(&self, d: usize) -> f64 {
        self.lambda * self.lambda * ((2.0 * std::f64::consts::PI).sqrt() * self.sigma).powi(d as i32)
    }
}

/// `φ(x | μ, S)` from a Cholesky factor of `S`.
fn gaussian_pdf(x: &[f64], mean: &[f64], chol: &Cholesky<f64, Dyn>) -> f64 {
    let d = x.len();
    let diff = DVector::from_iterator(d, x.iter().zip(mean).map(|(a, b)| a - b));
    let z = chol.l().solve_lower_triangular(&diff).expect("triangular factor is invertible");
    let log_det: f64 = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
    (-0.5 * z.norm_squared() - 0.5 * log_det - 0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln()).exp()
}

fn shifted_covariance_factor(cov: DMatrix<f64>, shift: f64) -> Result<Cholesky<f64, Dyn>> {
    let d = cov.nrows();
    Cholesky::new(cov + DMatrix::identity(d, d) * shift)
        .ok_or_else(|| Error::NotPositiveDefinite("mixture covariance plus GP length-scale".into()))
}

/// `Π[c(x, ·)] = λ² (√(2π)σ)^d Σ_l ρ_l φ(x | μ_l, Σ_l + σ² I)`.
pub fn gp_kernel_mean(x: &[f64], mixture: &MixtureTarget, kernel: &GpKernel) -> Result<f64> {
    let s2 = kernel.sigma * kernel.sigma;
    let mut total = 0.0;
    for l in 0..mixture.num_components() {
        let chol = shifted_covariance_factor(mixture.covariance(l), s2)?;
        total += mixture.weights()[l] * gaussian_pdf(x, mixture.mean(l), &chol);
    }
    Ok(kernel.scale(x.len()) * total)
}

/// `ΠΠ[c] = λ² (√(2π)σ)^d Σ_{l,m} ρ_l ρ_m φ(μ_l | μ_m, Σ_l + Σ_m + σ² I)`.
pub fn gp_kernel_double_integral(mixture: &MixtureTarget, kernel: &GpKernel) -> Result<f64> {
    let s2 = kernel.sigma * kernel.sigma;
    let w = mixture.weights();
    let mut total = 0.0;
    for l in 0..mixture.num_components() {
        for m in 0..mixture.num_components() {
            let chol = shifted_covariance_factor(mixture.covariance(l) + mixture.covariance(m), s2)?;
            total += w[l] * w[m] * gaussian_pdf(mixture.mean(l), mixture.mean(m), &chol);
        }
    }
    Ok(kernel.scale(mixture.dim()) * total)
}

#[derive(Debug, Clone)]
pub struct GpProblem {
    /// States, mixture scores and the sampled `f` values.
    pub samples: ScoredSampleSet,
    pub true_integral: f64,
    pub kernel: GpKernel,
    pub mixture: MixtureTarget,
    /// Jitter that made the joint covariance factorizable.
    pub jitter: f64,
}

/// Joint covariance of `(f(x_1), …, f(x_n), Π[f])`.
pub fn gp_joint_covariance(states: &[f64], d: usize, mixture: &MixtureTarget, kernel: &GpKernel) -> Result<DMatrix<f64>> {
    if d != mixture.dim() || d == 0 || states.len() % d != 0 {
        return Err(Error::DimensionMismatch {
            expected: mixture.dim(),
            got: d,
        });
    }
    let n = states.len() / d;
    let row = |i: usize| &states[i * d..(i + 1) * d];
    let mut cov = DMatrix::zeros(n + 1, n + 1);
    for i in 0..n {
        for j in 0..=i {
            let v = kernel.cov(row(i), row(j));
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
        let v = gp_kernel_mean(row(i), mixture, kernel)?;
        cov[(i, n)] = v;
        cov[(n, i)] = v;
    }
    cov[(n, n)] = gp_kernel_double_integral(mixture, kernel)?;
    Ok(cov)
}

/// Draws `f` at `states` and `Π[f]` jointly from the GP.
///
/// `jitter = None` uses `1e-10 λ²`. The jitter is multiplied by 10, up to six
/// times, until the joint covariance factorizes.
pub fn sample_gp_problem(
    states: &[f64],
    mixture: &MixtureTarget,
    kernel: GpKernel,
    seed: u64,
    jitter: Option<f64>,
) -> Result<GpProblem> {
    let d = mixture.dim();
    if states.is_empty() {
        return Err(Error::Empty("GP sample points"));
    }
    let cov = gp_joint_covariance(states, d, mixture, &kernel)?;
    let n1 = cov.nrows();
    let mut eps = jitter.unwrap_or(DEFAULT_GP_RELATIVE_JITTER * kernel.lambda * kernel.lambda);
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(Error::InvalidArgument(format!("jitter {eps} must be finite and >= 0")));
    }
    let mut attempt = 0;
    let chol = loop {
        let shifted = &cov + DMatrix::identity(n1, n1) * eps;
        if let Some(c) = Cholesky::new(shifted) {
            break c;
        }
        if attempt == JITTER_ESCALATIONS {
            return Err(Error::NotPositiveDefinite(format!(
                "GP joint covariance after {JITTER_ESCALATIONS} jitter escalations (last {eps:e})"
            )));
        }
        attempt += 1;
        eps = if eps > 0.0 { eps * 10.0 } else { DEFAULT_GP_RELATIVE_JITTER * kernel.lambda * kernel.lambda };
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = DVector::from_iterator(n1, (0..n1).map(|_| StandardNormal.sample(&mut rng)));
    let draw = chol.l() * z;
    let n = n1 - 1;
    let scores: Vec<f64> = (0..n).flat_map(|i| mixture.score(&states[i * d..(i + 1) * d])).collect();
    let samples = ScoredSampleSet::new(d, states.to_vec(), scores, Some(draw.as_slice()[..n].to_vec()))?;
    Ok(GpProblem {
        samples,
        true_integral: draw[n],
        kernel,
        mixture: mixture.clone(),
        jitter: eps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::GaussianTarget;

    fn standard_mixture() -> MixtureTarget {
        MixtureTarget::new(vec![1.0], vec![vec![0.0]], vec![DMatrix::identity(1, 1)]).unwrap()
    }

    fn trapezoid(f: impl Fn(f64) -> f64, lo: f64, hi: f64, nodes: usize) -> f64 {
        let h = (hi - lo) / (nodes - 1) as f64;
        let inner: f64 = (1..nodes - 1).map(|i| f(lo + i as f64 * h)).sum();
        h * (inner + 0.5 * (f(lo) + f(hi)))
    }

    fn phi(y: f64) -> f64 {
        (-0.5 * y * y).exp() / (2.0 * std::f64::consts::PI).sqrt()
    }

    #[test]
    fn kernel_mean_matches_quadrature() {
        let mix = standard_mixture();
        let k = GpKernel::new(1.3, 0.7).unwrap();
        for x in [-1.5, 0.0, 0.4, 2.2] {
            let closed = gp_kernel_mean(&[x], &mix, &k).unwrap();
            let quad = trapezoid(|y| k.cov(&[x], &[y]) * phi(y), -12.0, 12.0, 100_000);
            assert!((closed - quad).abs() < 1e-8, "{closed} vs {quad}");
        }
    }

    #[test]
    fn double_integral_matches_quadrature() {
        let mix = standard_mixture();
        let k = GpKernel::new(0.9, 1.1).unwrap();
        let closed = gp_kernel_double_integral(&mix, &k).unwrap();
        let inner = |x: f64| trapezoid(|y| k.cov(&[x], &[y]) * phi(y), -12.0, 12.0, 2001);
        let quad = trapezoid(|x| inner(x) * phi(x), -12.0, 12.0, 2001);
        assert!((closed - quad).abs() < 1e-6, "{closed} vs {quad}");
    }

    #[test]
    fn vanishing_amplitude() {
        let mix = standard_mixture();
        let states = GaussianTarget::standard(1).unwrap().sample(30, 1).unwrap();
        let p = sample_gp_problem(states.states(), &mix, GpKernel::new(1e-8, 1.0).unwrap(), 3, None).unwrap();
        assert!(p.true_integral.abs() < 1e-6);
        assert!(p.samples.f_values().unwrap().iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn deterministic_draws() {
        let mix = MixtureTarget::random(2, 3, 4).unwrap();
        let states = mix.sample(40, 5).unwrap();
        let k = GpKernel::new(1.0, 1.0).unwrap();
        let a = sample_gp_problem(states.states(), &mix, k, 6, None).unwrap();
        let b = sample_gp_problem(states.states(), &mix, k, 6, None).unwrap();
        assert_eq!(a.true_integral, b.true_integral);
        assert_eq!(a.samples.f_values().unwrap(), b.samples.f_values().unwrap());
    }

    #[test]
    fn rejects_bad_kernel() {
        assert!(GpKernel::new(0.0, 1.0).is_err());
        assert!(GpKernel::new(1.0, -1.0).is_err());
    }
}
