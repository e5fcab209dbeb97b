//! Test problems with known integrals, and the JSON problem description used
//! by the benchmark harness.

pub mod genz;
pub mod gp;
pub mod polynomial;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::samples::ScoredSampleSet;
use crate::targets::{GaussianTarget, MixtureSpec, MixtureTarget, Target};

pub use genz::{genz_eval, genz_integral, genz_transformed_eval, GenzKind, GenzProblem};
pub use gp::{gp_joint_covariance, gp_kernel_double_integral, gp_kernel_mean, sample_gp_problem, GpKernel, GpProblem};
pub use polynomial::{polynomial_integral, PolynomialIntegrand};

/// `Φ(x) = erfc(-x/√2) / 2`.
pub fn standard_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// A scalar broadcast to every coordinate, or one value per coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerCoordinate {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl PerCoordinate {
    fn expand(&self, d: usize, what: &str) -> Result<Vec<f64>> {
        match self {
            PerCoordinate::Scalar(v) => Ok(vec![*v; d]),
            PerCoordinate::Vector(v) if v.len() == d => Ok(v.clone()),
            PerCoordinate::Vector(v) => Err(Error::InvalidArgument(format!(
                "{what} has {} entries for dimension {d}",
                v.len()
            ))),
        }
    }
}

fn default_components() -> usize {
    2
}

fn one() -> f64 {
    1.0
}

/// Problem description consumed by the benchmark harness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "problem", rename_all = "snake_case")]
pub enum ProblemSpec {
    /// A transformed Genz function against `N(0, I)`.
    Genz {
        kind: GenzKind,
        d: usize,
        #[serde(default)]
        a: Option<PerCoordinate>,
        #[serde(default)]
        u: Option<PerCoordinate>,
    },
    /// A GP draw integrated against a Gaussian mixture. Without `mixture`, a
    /// random mixture is generated from `mixture_seed` (or the repetition seed).
    Gp {
        d: usize,
        #[serde(default = "default_components")]
        components: usize,
        #[serde(default = "one")]
        lambda: f64,
        #[serde(default = "one")]
        sigma: f64,
        #[serde(default)]
        mixture: Option<MixtureSpec>,
        #[serde(default)]
        mixture_seed: Option<u64>,
    },
    /// A polynomial against `N(0, σ² I)`.
    Poly {
        alpha: Vec<Vec<f64>>,
        beta: Vec<Vec<u32>>,
        #[serde(default = "one")]
        sigma2: f64,
    },
}

/// One draw of a problem: scored samples with `f` values and the truth.
#[derive(Debug, Clone)]
pub struct Realization {
    pub samples: ScoredSampleSet,
    pub true_integral: Option<f64>,
}

impl ProblemSpec {
    /// `f(x) = x_1 + … + x_d` against `N(0, I)`.
    pub fn sum_of_coordinates(d: usize) -> Self {
        let alpha = vec![vec![1.0; d]; d];
        let beta = (0..d).map(|j| (0..d).map(|i| u32::from(i == j)).collect()).collect();
        ProblemSpec::Poly { alpha, beta, sigma2: 1.0 }
    }

    pub fn genz(kind: GenzKind, d: usize) -> Self {
        ProblemSpec::Genz { kind, d, a: None, u: None }
    }

    pub fn dim(&self) -> usize {
        match self {
            ProblemSpec::Genz { d, .. } | ProblemSpec::Gp { d, .. } => *d,
            ProblemSpec::Poly { alpha, .. } => alpha.first().map_or(0, Vec::len),
        }
    }

    /// Short name used in reports, e.g. `genz_corner_peak`.
    pub fn name(&self) -> String {
        match self {
            ProblemSpec::Genz { kind, .. } => format!("genz_{kind}"),
            ProblemSpec::Gp { .. } => "gp".into(),
            ProblemSpec::Poly { .. } => "poly".into(),
        }
    }

    pub fn genz_problem(&self) -> Result<Option<GenzProblem>> {
        match self {
            ProblemSpec::Genz { kind, d, a, u } => {
                let a = a.clone().unwrap_or(PerCoordinate::Scalar(genz::DEFAULT_A)).expand(*d, "a")?;
                let u = u.clone().unwrap_or(PerCoordinate::Scalar(genz::DEFAULT_U)).expand(*d, "u")?;
                Ok(Some(GenzProblem::new(*kind, a, u)?))
            }
            _ => Ok(None),
        }
    }

    /// Draws `n` scored samples with `f` values, deterministically from `seed`.
    pub fn realize(&self, n: usize, seed: u64) -> Result<Realization> {
        if n == 0 {
            return Err(Error::Empty("sample count"));
        }
        match self {
            ProblemSpec::Genz { d, .. } => {
                let problem = self.genz_problem()?.expect("genz spec");
                let samples = GaussianTarget::standard(*d)?
                    .sample(n, seed)?
                    .with_f(|x| genz_transformed_eval(&problem, x))?;
                Ok(Realization {
                    samples,
                    true_integral: Some(genz_integral(&problem)?),
                })
            }
            ProblemSpec::Gp {
                d,
                components,
                lambda,
                sigma,
                mixture,
                mixture_seed,
            } => {
                let mixture = match mixture {
                    Some(spec) => MixtureTarget::from_spec(spec)?,
                    None => MixtureTarget::random(*d, *components, mixture_seed.unwrap_or(seed))?,
                };
                if mixture.dim() != *d {
                    return Err(Error::DimensionMismatch {
                        expected: *d,
                        got: mixture.dim(),
                    });
                }
                let states = mixture.sample(n, seed)?;
                let draw_seed = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
                let gp = sample_gp_problem(states.states(), &mixture, GpKernel::new(*lambda, *sigma)?, draw_seed, None)?;
                Ok(Realization {
                    samples: gp.samples,
                    true_integral: Some(gp.true_integral),
                })
            }
            ProblemSpec::Poly { alpha, beta, sigma2 } => {
                let integrand = PolynomialIntegrand::new(alpha.clone(), beta.clone(), *sigma2)?;
                let samples = integrand.target()?.sample(n, seed)?.with_f(|x| integrand.eval(x))?;
                Ok(Realization {
                    samples,
                    true_integral: Some(polynomial_integral(&integrand)),
                })
            }
        }
    }
}
