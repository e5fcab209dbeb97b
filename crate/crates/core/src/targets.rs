//! Target distributions known through their score function.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::samples::ScoredSampleSet;

/// A distribution usable with the Langevin Stein operator.
pub trait Target: Send + Sync {
    fn dim(&self) -> usize;
    /// `∇log π(x)`.
    fn score(&self, x: &[f64]) -> Vec<f64>;
    fn log_density(&self, x: &[f64]) -> f64;
    /// Exact i.i.d. draws with scores filled in (no `f` values).
    fn sample(&self, count: usize, seed: u64) -> Result<ScoredSampleSet>;
}

/// A Gaussian component with a factorized covariance.
#[derive(Debug, Clone)]
struct GaussianComponent {
    mean: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    log_norm: f64,
}

impl GaussianComponent {
    fn new(mean: Vec<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: cov.nrows(),
            });
        }
        ensure_finite(&mean, "mean")?;
        ensure_finite(cov.as_slice(), "covariance")?;
        let asym = (&cov - cov.transpose()).amax();
        if asym > 1e-10 * cov.amax().max(1.0) {
            return Err(Error::NotPositiveDefinite("covariance is not symmetric".into()));
        }
        let chol = Cholesky::new(cov).ok_or_else(|| Error::NotPositiveDefinite("covariance".into()))?;
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let log_norm = -0.5 * (d as f64 * (2.0 * PI).ln() + log_det);
        Ok(Self {
            mean: DVector::from_vec(mean),
            chol,
            log_norm,
        })
    }

    fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Returns `(log φ(x), Σ⁻¹(μ - x))`.
    fn log_pdf_and_score(&self, x: &[f64]) -> (f64, DVector<f64>) {
        let diff = DVector::from_column_slice(x) - &self.mean;
        let precision_diff = self.chol.solve(&diff);
        let quad = diff.dot(&precision_diff);
        (self.log_norm - 0.5 * quad, -precision_diff)
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_iterator(self.dim(), (0..self.dim()).map(|_| StandardNormal.sample(rng)));
        &self.mean + self.chol.l_dirty().lower_triangle() * z
    }
}

/// `N(μ, Σ)`; the score is `-Σ⁻¹(x - μ)`.
#[derive(Debug, Clone)]
pub struct GaussianTarget {
    component: GaussianComponent,
}

impl GaussianTarget {
    pub fn isotropic(mean: Vec<f64>, variance: f64) -> Result<Self> {
        if !(variance > 0.0) || !variance.is_finite() {
            return Err(Error::NotPositiveDefinite(format!("variance {variance} must be positive")));
        }
        let d = mean.len();
        if d == 0 {
            return Err(Error::InvalidArgument("dimension must be at least 1".into()));
        }
        Self::full(mean, DMatrix::from_diagonal_element(d, d, variance))
    }

    pub fn standard(d: usize) -> Result<Self> {
        Self::isotropic(vec![0.0; d], 1.0)
    }

    pub fn full(mean: Vec<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        if mean.is_empty() {
            return Err(Error::InvalidArgument("dimension must be at least 1".into()));
        }
        Ok(Self {
            component: GaussianComponent::new(mean, covariance)?,
        })
    }
}

impl Target for GaussianTarget {
    fn dim(&self) -> usize {
        self.component.dim()
    }

    fn score(&self, x: &[f64]) -> Vec<f64> {
        self.component.log_pdf_and_score(x).1.as_slice().to_vec()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        self.component.log_pdf_and_score(x).0
    }

    fn sample(&self, count: usize, seed: u64) -> Result<ScoredSampleSet> {
        sample_with(self, count, seed, |rng| self.component.draw(rng))
    }
}

/// Convenience wrapper for the score of a Gaussian target.
///
/// Some texts print the isotropic score as `-x²/σ²`; the correct
/// expression, used here, is `-(x - μ)/σ²`.
pub fn gaussian_score(x: &[f64], target: &GaussianTarget) -> Result<Vec<f64>> {
    check_dim(x, target.dim())?;
    Ok(target.score(x))
}

/// JSON description of a Gaussian mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Vec<Vec<f64>>>,
}

/// `π(x) = Σ_l ρ_l φ(x | μ_l, Σ_l)`.
#[derive(Debug, Clone)]
pub struct MixtureTarget {
    weights: Vec<f64>,
    log_weights: Vec<f64>,
    components: Vec<GaussianComponent>,
    spec: MixtureSpec,
}

impl MixtureTarget {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, covariances: Vec<DMatrix<f64>>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Empty("mixture weights"));
        }
        if weights.len() != means.len() || weights.len() != covariances.len() {
            return Err(Error::LengthMismatch {
                what: "mixture weights, means and covariances",
                left: weights.len(),
                right: means.len().min(covariances.len()),
            });
        }
        if weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::InvalidArgument("mixture weights must lie in [0, 1]".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("mixture weights sum to {total}, not 1")));
        }
        let d = means[0].len();
        if d == 0 {
            return Err(Error::InvalidArgument("dimension must be at least 1".into()));
        }
        let spec = MixtureSpec {
            weights: weights.clone(),
            means: means.clone(),
            covariances: covariances
                .iter()
                .map(|c| c.row_iter().map(|r| r.iter().copied().collect()).collect())
                .collect(),
        };
        let components = means
            .into_iter()
            .zip(covariances)
            .map(|(m, c)| {
                if m.len() != d {
                    return Err(Error::DimensionMismatch { expected: d, got: m.len() });
                }
                GaussianComponent::new(m, c)
            })
            .collect::<Result<Vec<_>>>()?;
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        Ok(Self {
            weights,
            log_weights,
            components,
            spec,
        })
    }

    /// Normalizes positive unnormalized weights before construction.
    pub fn from_unnormalized(raw_weights: &[f64], means: Vec<Vec<f64>>, covariances: Vec<DMatrix<f64>>) -> Result<Self> {
        if raw_weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument("unnormalized weights must be finite and non-negative".into()));
        }
        let total: f64 = raw_weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidArgument("unnormalized weights sum to zero".into()));
        }
        Self::new(raw_weights.iter().map(|w| w / total).collect(), means, covariances)
    }

    pub fn from_spec(spec: &MixtureSpec) -> Result<Self> {
        let covs = spec
            .covariances
            .iter()
            .map(|rows| {
                let d = rows.len();
                if rows.iter().any(|r| r.len() != d) {
                    return Err(Error::InvalidArgument("covariance must be square".into()));
                }
                Ok(DMatrix::from_row_iterator(d, d, rows.iter().flatten().copied()))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(spec.weights.clone(), spec.means.clone(), covs)
    }

    /// Random mixture: means from `N(0, 3I)`, `Σ_l = A_lᵀA_l + 1e-8 I` with
    /// `A_l` entries uniform on `[0, 1)`, weights uniform then normalized.
    pub fn random(d: usize, components: usize, seed: u64) -> Result<Self> {
        if d == 0 || components == 0 {
            return Err(Error::InvalidArgument("need d >= 1 and at least one component".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut means = Vec::with_capacity(components);
        let mut covs = Vec::with_capacity(components);
        for _ in 0..components {
            means.push(
                (0..d)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        3f64.sqrt() * z
                    })
                    .collect::<Vec<f64>>(),
            );
            let a = DMatrix::from_fn(d, d, |_, _| rng.random::<f64>());
            let mut cov = a.transpose() * &a;
            for i in 0..d {
                cov[(i, i)] += 1e-8;
            }
            // Exact symmetry for the Cholesky check.
            let cov = (&cov + cov.transpose()) * 0.5;
            covs.push(cov);
        }
        let raw: Vec<f64> = (0..components).map(|_| rng.random::<f64>()).collect();
        Self::from_unnormalized(&raw, means, covs)
    }

    pub fn spec(&self) -> &MixtureSpec {
        &self.spec
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    pub fn mean(&self, l: usize) -> &[f64] {
        self.components[l].mean.as_slice()
    }

    pub fn covariance(&self, l: usize) -> DMatrix<f64> {
        let chol = &self.components[l].chol;
        let lower = chol.l();
        &lower * lower.transpose()
    }

    fn log_terms(&self, x: &[f64]) -> (Vec<f64>, Vec<DVector<f64>>) {
        self.components
            .iter()
            .zip(&self.log_weights)
            .map(|(c, lw)| {
                let (lp, s) = c.log_pdf_and_score(x);
                (lw + lp, s)
            })
            .unzip()
    }
}

impl Target for MixtureTarget {
    fn dim(&self) -> usize {
        self.components[0].dim()
    }

    /// Posterior-weighted component scores; weights are formed after
    /// subtracting the largest log term so far-tail points do not underflow.
    fn score(&self, x: &[f64]) -> Vec<f64> {
        let (log_terms, scores) = self.log_terms(x);
        let max = log_terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        let mut acc = DVector::zeros(self.dim());
        for (lt, s) in log_terms.iter().zip(&scores) {
            let w = (lt - max).exp();
            total += w;
            acc.axpy(w, s, 1.0);
        }
        (acc / total).as_slice().to_vec()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let (log_terms, _) = self.log_terms(x);
        log_sum_exp(&log_terms)
    }

    fn sample(&self, count: usize, seed: u64) -> Result<ScoredSampleSet> {
        let cumulative: Vec<f64> = self
            .weights
            .iter()
            .scan(0.0, |acc, w| {
                *acc += w;
                Some(*acc)
            })
            .collect();
        sample_with(self, count, seed, |rng| {
            let u: f64 = rng.random::<f64>() * cumulative[cumulative.len() - 1];
            // Zero-weight components are never selected.
            let l = cumulative
                .iter()
                .position(|&c| u < c)
                .unwrap_or_else(|| self.weights.iter().rposition(|&w| w > 0.0).unwrap_or(0));
            self.components[l].draw(rng)
        })
    }
}

pub fn mixture_score(x: &[f64], target: &MixtureTarget) -> Result<Vec<f64>> {
    check_dim(x, target.dim())?;
    Ok(target.score(x))
}

/// Draws `count` exact samples and scores them.
pub fn sample_target(target: &dyn Target, count: usize, seed: u64) -> Result<ScoredSampleSet> {
    target.sample(count, seed)
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn check_dim(x: &[f64], d: usize) -> Result<()> {
    if x.len() == d {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected: d, got: x.len() })
    }
}

fn sample_with<T, F>(target: &T, count: usize, seed: u64, mut draw: F) -> Result<ScoredSampleSet>
where
    T: Target + ?Sized,
    F: FnMut(&mut ChaCha8Rng) -> DVector<f64>,
{
    if count == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    let d = target.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states = Vec::with_capacity(count * d);
    let mut scores = Vec::with_capacity(count * d);
    for _ in 0..count {
        let x = draw(&mut rng);
        scores.extend(target.score(x.as_slice()));
        states.extend_from_slice(x.as_slice());
    }
    ScoredSampleSet::new(d, states, scores, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_component() -> MixtureTarget {
        MixtureTarget::new(
            vec![0.3, 0.7],
            vec![vec![-1.0, 0.5], vec![2.0, -0.5]],
            vec![
                DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.8]),
                DMatrix::from_row_slice(2, 2, &[0.5, -0.1, -0.1, 1.5]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn gaussian_score_examples() {
        let t = GaussianTarget::standard(1).unwrap();
        assert_eq!(gaussian_score(&[0.0], &t).unwrap(), vec![0.0]);
        assert!((gaussian_score(&[2.0], &t).unwrap()[0] + 2.0).abs() < 1e-15);
        let t = GaussianTarget::isotropic(vec![0.0, 0.0], 4.0).unwrap();
        let s = gaussian_score(&[1.0, 1.0], &t).unwrap();
        assert!((s[0] + 0.25).abs() < 1e-15 && (s[1] + 0.25).abs() < 1e-15);
        assert!(gaussian_score(&[1.0], &t).is_err());
    }

    #[test]
    fn rejects_bad_covariance() {
        assert!(GaussianTarget::isotropic(vec![0.0], 0.0).is_err());
        let not_pd = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(GaussianTarget::full(vec![0.0, 0.0], not_pd).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(GaussianTarget::full(vec![0.0, 0.0], asym).is_err());
    }

    #[test]
    fn single_component_matches_gaussian() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.4, 0.4, 1.0]);
        let g = GaussianTarget::full(vec![0.5, -1.0], cov.clone()).unwrap();
        let m = MixtureTarget::new(vec![1.0], vec![vec![0.5, -1.0]], vec![cov]).unwrap();
        for x in [[0.0, 0.0], [3.0, -2.0], [-40.0, 25.0]] {
            let a = gaussian_score(&x, &g).unwrap();
            let b = mixture_score(&x, &m).unwrap();
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() <= 1e-14 * (1.0 + u.abs()), "{u} vs {v}");
            }
        }
    }

    #[test]
    fn symmetric_mixture_at_origin() {
        let m = MixtureTarget::new(
            vec![0.5, 0.5],
            vec![vec![1.5, -0.5], vec![-1.5, 0.5]],
            vec![DMatrix::identity(2, 2), DMatrix::identity(2, 2)],
        )
        .unwrap();
        let s = mixture_score(&[0.0, 0.0], &m).unwrap();
        assert!(s.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn mixture_score_matches_finite_differences() {
        let m = two_component();
        let h = 1e-5;
        for x in [[0.3, -0.2], [2.5, 1.0], [-3.0, 2.0], [0.0, 0.0]] {
            let s = m.score(&x);
            for l in 0..2 {
                let mut xp = x;
                let mut xm = x;
                xp[l] += h;
                xm[l] -= h;
                let fd = (m.log_density(&xp) - m.log_density(&xm)) / (2.0 * h);
                assert!((s[l] - fd).abs() <= 1e-6 * s[l].abs().max(1.0), "{} vs {fd}", s[l]);
            }
        }
    }

    #[test]
    fn far_tail_score_is_finite() {
        let m = two_component();
        let s = m.score(&[1e3, -1e3]);
        assert!(s.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn weight_scaling_invariance() {
        let means = vec![vec![0.0], vec![3.0]];
        let covs = vec![DMatrix::identity(1, 1), DMatrix::from_element(1, 1, 2.0)];
        let a = MixtureTarget::from_unnormalized(&[1.0, 3.0], means.clone(), covs.clone()).unwrap();
        let b = MixtureTarget::from_unnormalized(&[7.5, 22.5], means, covs).unwrap();
        for x in [-2.0, 0.7, 5.0] {
            assert!((a.score(&[x])[0] - b.score(&[x])[0]).abs() < 1e-14);
        }
    }

    #[test]
    fn sampling_is_seeded_and_centered() {
        let t = GaussianTarget::standard(1).unwrap();
        let a = sample_target(&t, 1_000_000, 3).unwrap();
        let mean = a.states().iter().sum::<f64>() / a.len() as f64;
        assert!(mean.abs() < 4e-3, "{mean}");
        let b = sample_target(&t, 1000, 5).unwrap();
        let c = sample_target(&t, 1000, 5).unwrap();
        assert_eq!(b, c);
        assert!(!b.has_f_values());
    }

    #[test]
    fn degenerate_weights_pick_one_component() {
        let m = MixtureTarget::new(
            vec![1.0, 0.0],
            vec![vec![-50.0], vec![50.0]],
            vec![DMatrix::identity(1, 1), DMatrix::identity(1, 1)],
        )
        .unwrap();
        let s = m.sample(2000, 1).unwrap();
        assert!(s.states().iter().all(|&x| x < 0.0));
    }

    #[test]
    fn random_mixture_is_valid_and_round_trips() {
        let m = MixtureTarget::random(3, 4, 9).unwrap();
        assert!((m.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let json = serde_json::to_string(m.spec()).unwrap();
        let spec: MixtureSpec = serde_json::from_str(&json).unwrap();
        let back = MixtureTarget::from_spec(&spec).unwrap();
        let x = [0.1, -0.4, 0.9];
        for (a, b) in m.score(&x).iter().zip(back.score(&x)) {
            assert!((a - b).abs() < 1e-10 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn rejects_unnormalized_weights() {
        let r = MixtureTarget::new(vec![0.5, 0.6], vec![vec![0.0], vec![1.0]], vec![DMatrix::identity(1, 1); 2]);
        assert!(r.is_err());
    }
}
