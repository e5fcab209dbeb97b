//! Additive ensembles `g = θ̃ · b(x) + Σ_k θ̄_k · k₀⁽ᵏ⁾(x, X)` of a polynomial
//! control variate and one or two kernel control variates on shared centers.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cv::{ControlVariate, StepGeometry, Trainable};
use crate::error::{ensure_finite, Error, Result};
use crate::kernel::{constrained_interpolation, default_jitter, median_heuristic, BaseKernelParams, KernelBasis, KernelCV};
use crate::poly::{basis_matrix, MultiIndexSet, PolynomialCV};
use crate::samples::ScoredSampleSet;

pub const MAX_KERNEL_PARTS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleCV {
    pub poly: PolynomialCV,
    pub kernels: Vec<KernelCV>,
    pub offset: f64,
}

impl EnsembleCV {
    /// Parts keep their own parameters; their offsets are ignored.
    pub fn new(poly: PolynomialCV, kernels: Vec<KernelCV>, offset: f64) -> Result<Self> {
        if kernels.is_empty() || kernels.len() > MAX_KERNEL_PARTS {
            return Err(Error::InvalidArgument(format!(
                "an ensemble takes 1 to {MAX_KERNEL_PARTS} kernel parts, got {}",
                kernels.len()
            )));
        }
        let d = poly.dim();
        for k in &kernels {
            if k.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: k.dim(),
                });
            }
            let first = &kernels[0].basis;
            let same = k.basis.len() == first.len()
                && (0..first.len()).all(|j| {
                    k.basis.center(j) == first.center(j) && k.basis.center_score(j) == first.center_score(j)
                });
            if !same {
                return Err(Error::InvalidArgument("kernel parts must share their centers".into()));
            }
        }
        Ok(Self { poly, kernels, offset })
    }

    /// All-zero ensemble with one kernel part per entry of `params`, centered
    /// at the rows of `centers`.
    pub fn zeros(
        mi: MultiIndexSet,
        params: &[BaseKernelParams],
        centers: &ScoredSampleSet,
        geometry: StepGeometry,
    ) -> Result<Self> {
        if mi.dim() != centers.dim() {
            return Err(Error::DimensionMismatch {
                expected: mi.dim(),
                got: centers.dim(),
            });
        }
        let kernels = params
            .iter()
            .map(|p| KernelCV::zeros(KernelBasis::new(*p, centers)).with_geometry(geometry))
            .collect();
        Self::new(PolynomialCV::zeros(mi), kernels, 0.0)
    }
}

pub fn ensemble_eval(cv: &EnsembleCV, x: &[f64], score: &[f64]) -> f64 {
    cv.eval(x, score)
}

impl ControlVariate for EnsembleCV {
    fn dim(&self) -> usize {
        self.poly.dim()
    }

    fn eval(&self, x: &[f64], score: &[f64]) -> f64 {
        self.poly.eval(x, score) + self.kernels.iter().map(|k| k.eval(x, score)).sum::<f64>()
    }

    fn offset(&self) -> f64 {
        self.offset
    }
}

impl Trainable for EnsembleCV {
    fn num_params(&self) -> usize {
        self.poly.num_params() + self.kernels.iter().map(|k| k.num_params()).sum::<usize>()
    }

    fn params(&self) -> Vec<f64> {
        let mut out = self.poly.theta.clone();
        for k in &self.kernels {
            out.extend_from_slice(&k.theta);
        }
        out
    }

    fn set_params(&mut self, params: &[f64]) {
        let blocks = self.blocks();
        self.poly.theta.copy_from_slice(&params[blocks[0].clone()]);
        for (k, r) in self.kernels.iter_mut().zip(&blocks[1..]) {
            k.theta.copy_from_slice(&params[r.clone()]);
        }
    }

    fn set_offset(&mut self, offset: f64) {
        self.offset = offset;
    }

    fn eval_with_param_grad(&self, x: &[f64], score: &[f64], grad: &mut [f64]) -> f64 {
        let blocks = self.blocks();
        let mut value = self.poly.eval_with_param_grad(x, score, &mut grad[blocks[0].clone()]);
        for (k, r) in self.kernels.iter().zip(&blocks[1..]) {
            value += k.eval_with_param_grad(x, score, &mut grad[r.clone()]);
        }
        value
    }

    fn is_linear(&self) -> bool {
        true
    }

    fn blocks(&self) -> Vec<Range<usize>> {
        let mut out = vec![0..self.poly.num_params()];
        let mut at = self.poly.num_params();
        for k in &self.kernels {
            out.push(at..at + k.num_params());
            at += k.num_params();
        }
        out
    }

    fn is_euclidean(&self) -> bool {
        self.kernels.iter().all(|k| k.is_euclidean())
    }

    fn eval_with_direction(&self, row: usize, x: &[f64], score: &[f64], dir: &mut [f64]) -> f64 {
        let blocks = self.blocks();
        let mut value = self.poly.eval_with_param_grad(x, score, &mut dir[blocks[0].clone()]);
        for (k, r) in self.kernels.iter().zip(&blocks[1..]) {
            value += k.eval_with_direction(row, x, score, &mut dir[r.clone()]);
        }
        value
    }
}

/// Columns of `[1, b_1, …, b_p]` that are linearly dependent on earlier
/// columns, by modified Gram-Schmidt with a relative tolerance.
fn dependent_columns(b: &DMatrix<f64>) -> Vec<usize> {
    let mut accepted: Vec<DVector<f64>> = Vec::new();
    let mut dependent = Vec::new();
    for j in 0..b.ncols() {
        let mut v = b.column(j).into_owned();
        let norm0 = v.norm();
        for q in &accepted {
            let proj = q.dot(&v);
            v -= q * proj;
        }
        let norm = v.norm();
        if norm0 == 0.0 || norm <= 1e-9 * norm0 {
            dependent.push(j);
        } else {
            accepted.push(v / norm);
        }
    }
    dependent
}

/// Semi-exact control functional: solves
/// `[K B; Bᵀ 0] [θ̄; θ̃] = [f; 0]` with `K = k₀(X, X) + εI` and
/// `B = [1, b_1(X), …, b_p(X)]`.
///
/// The fit interpolates `f` on the training set and reproduces it exactly
/// whenever `f` lies in the span of `{1, b_1, …, b_p}`. The leading entry of
/// `θ̃` becomes the offset. `jitter = None` uses the kernel default.
pub fn semi_exact_solve(
    train: &ScoredSampleSet,
    mi: &MultiIndexSet,
    params: BaseKernelParams,
    jitter: Option<f64>,
) -> Result<EnsembleCV> {
    let m = train.len();
    let p = mi.len();
    if train.dim() != mi.dim() {
        return Err(Error::DimensionMismatch {
            expected: mi.dim(),
            got: train.dim(),
        });
    }
    if m < p + 2 {
        return Err(Error::InvalidArgument(format!(
            "semi-exact solve needs at least {} samples for {p} basis functions, got {m}",
            p + 2
        )));
    }
    let f = DVector::from_column_slice(train.f_values()?);
    let mut b: DMatrix<f64> = DMatrix::from_element(m, p + 1, 1.0);
    b.view_mut((0, 1), (m, p)).copy_from(&basis_matrix(train, mi));
    let dependent = dependent_columns(&b);
    if !dependent.is_empty() {
        return Err(Error::RankDeficient { columns: dependent });
    }

    let basis = KernelBasis::new(params, train);
    let gram = basis.gram();
    let jitter = jitter.unwrap_or_else(|| default_jitter(&gram));

    let (theta_bar, beta) = constrained_interpolation(&gram, &b, &f, jitter)?;
    ensure_finite(theta_bar.as_slice(), "semi-exact kernel weights")?;
    ensure_finite(beta.as_slice(), "semi-exact polynomial weights")?;

    let poly = PolynomialCV::new(mi.clone(), beta.as_slice()[1..].to_vec(), beta[0])?;
    let kernel = KernelCV {
        basis,
        theta: theta_bar.as_slice().to_vec(),
        offset: 0.0,
        geometry: StepGeometry::default(),
    };
    EnsembleCV::new(poly, vec![kernel], beta[0])
}

/// Length-scales `(ℓ, √2 ℓ)` from the median heuristic, sharing `alpha1`.
pub fn build_multi_kernel_params(
    states: &[f64],
    d: usize,
    alpha1: f64,
) -> Result<(BaseKernelParams, BaseKernelParams)> {
    let l = median_heuristic(states, d)?;
    Ok((
        BaseKernelParams::new(alpha1, l)?,
        BaseKernelParams::new(alpha1, std::f64::consts::SQRT_2 * l)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::enumerate_multi_indices;
    use crate::targets::{GaussianTarget, Target};

    fn params(a1: f64, a2: f64) -> BaseKernelParams {
        BaseKernelParams::new(a1, a2).unwrap()
    }

    #[test]
    fn eval_is_sum_of_parts() {
        let t = GaussianTarget::standard(2).unwrap();
        let centers = t.sample(6, 1).unwrap();
        let mi = enumerate_multi_indices(2, 2).unwrap();
        let mut cv = EnsembleCV::zeros(mi, &[params(0.1, 1.0), params(0.1, 1.4)], &centers, StepGeometry::Euclidean)
            .unwrap();
        let probe = t.sample(5, 2).unwrap();
        for i in 0..5 {
            assert_eq!(ensemble_eval(&cv, probe.state(i), probe.score(i)), 0.0);
        }
        let p: Vec<f64> = (0..cv.num_params()).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
        cv.set_params(&p);
        assert_eq!(cv.params(), p);
        for i in 0..5 {
            let (x, s) = (probe.state(i), probe.score(i));
            let parts = cv.poly.eval(x, s) + cv.kernels[0].eval(x, s) + cv.kernels[1].eval(x, s);
            assert!((cv.eval(x, s) - parts).abs() <= 1e-12 * (1.0 + parts.abs()));
        }
        for k in cv.kernels.iter_mut() {
            k.theta.fill(0.0);
        }
        let (x, s) = (probe.state(0), probe.score(0));
        assert_eq!(cv.eval(x, s), cv.poly.eval(x, s));
    }

    #[test]
    fn parameter_additivity() {
        let t = GaussianTarget::standard(1).unwrap();
        let centers = t.sample(4, 3).unwrap();
        let mi = enumerate_multi_indices(1, 2).unwrap();
        let mut cv = EnsembleCV::zeros(mi, &[params(1.0, 0.7)], &centers, StepGeometry::Euclidean).unwrap();
        let a: Vec<f64> = (0..cv.num_params()).map(|i| 0.3 * i as f64).collect();
        let b: Vec<f64> = (0..cv.num_params()).map(|i| 1.0 - 0.2 * i as f64).collect();
        let (x, s) = ([0.4], [-0.4]);
        cv.set_params(&a);
        let ea = cv.eval(&x, &s);
        cv.set_params(&b);
        let eb = cv.eval(&x, &s);
        let ab: Vec<f64> = a.iter().zip(&b).map(|(u, v)| u + v).collect();
        cv.set_params(&ab);
        assert!((cv.eval(&x, &s) - ea - eb).abs() < 1e-12);
    }

    #[test]
    fn rejects_mismatched_centers() {
        let t = GaussianTarget::standard(1).unwrap();
        let a = KernelCV::zeros(KernelBasis::new(params(1.0, 1.0), &t.sample(3, 1).unwrap()));
        let b = KernelCV::zeros(KernelBasis::new(params(1.0, 2.0), &t.sample(3, 2).unwrap()));
        let poly = PolynomialCV::zeros(enumerate_multi_indices(1, 1).unwrap());
        assert!(EnsembleCV::new(poly.clone(), vec![a.clone(), b], 0.0).is_err());
        assert!(EnsembleCV::new(poly.clone(), vec![], 0.0).is_err());
        assert!(EnsembleCV::new(poly, vec![a.clone(), a.clone(), a], 0.0).is_err());
    }

    #[test]
    fn semi_exact_reproduces_span() {
        let t = GaussianTarget::standard(4).unwrap();
        let train = t.sample(100, 5).unwrap().with_f(|x| x.iter().sum()).unwrap();
        let mi = enumerate_multi_indices(4, 1).unwrap();
        let cv = semi_exact_solve(&train, &mi, params(0.1, 1.5), None).unwrap();
        let probe = t.sample(200, 6).unwrap();
        for i in 0..probe.len() {
            let f: f64 = probe.state(i).iter().sum();
            assert!((f - cv.eval(probe.state(i), probe.score(i)) - cv.offset).abs() < 1e-8);
        }
    }

    #[test]
    fn semi_exact_constant_integrand() {
        let t = GaussianTarget::standard(2).unwrap();
        let train = t.sample(60, 7).unwrap().with_f(|_| 2.5).unwrap();
        let cv = semi_exact_solve(&train, &enumerate_multi_indices(2, 2).unwrap(), params(0.1, 1.0), None).unwrap();
        assert!((cv.offset - 2.5).abs() < 1e-8);
        assert!(cv.poly.theta.iter().all(|t| t.abs() < 1e-8));
        assert!(cv.kernels[0].theta.iter().all(|t| t.abs() < 1e-8));
    }

    #[test]
    fn semi_exact_interpolates_and_meets_constraints() {
        let t = GaussianTarget::standard(2).unwrap();
        let train = t.sample(80, 8).unwrap().with_f(|x| (x[0] - 0.5 * x[1]).sin()).unwrap();
        let mi = enumerate_multi_indices(2, 2).unwrap();
        let cv = semi_exact_solve(&train, &mi, params(0.1, 1.0), None).unwrap();
        let f = train.f_values().unwrap();
        for i in 0..train.len() {
            let r = f[i] - cv.offset - cv.eval(train.state(i), train.score(i));
            assert!(r.abs() < 1e-6, "{r}");
        }
        let theta = DVector::from_column_slice(&cv.kernels[0].theta);
        let mut b = DMatrix::from_element(train.len(), mi.len() + 1, 1.0);
        b.view_mut((0, 1), (train.len(), mi.len())).copy_from(&basis_matrix(&train, &mi));
        let constraint = b.tr_mul(&theta);
        assert!(constraint.amax() < 1e-8, "{constraint}");
    }

    #[test]
    fn semi_exact_ignores_row_order() {
        let t = GaussianTarget::standard(2).unwrap();
        let train = t.sample(60, 9).unwrap().with_f(|x| (x[0] * x[1]).cos()).unwrap();
        let rev: Vec<usize> = (0..60).rev().collect();
        let mi = enumerate_multi_indices(2, 1).unwrap();
        let p = params(0.1, 0.5);
        let a = semi_exact_solve(&train, &mi, p, None).unwrap();
        let b = semi_exact_solve(&train.subset(&rev).unwrap(), &mi, p, None).unwrap();
        let probe = t.sample(10, 10).unwrap();
        for i in 0..probe.len() {
            let (u, v) = (a.eval(probe.state(i), probe.score(i)), b.eval(probe.state(i), probe.score(i)));
            assert!((u - v).abs() < 1e-8, "{u} vs {v}");
        }
    }

    #[test]
    fn rank_deficiency_names_columns() {
        // Zero scores make every first-order basis function vanish.
        let set = ScoredSampleSet::new(1, (0..10).map(f64::from).collect(), vec![0.0; 10], Some(vec![1.0; 10])).unwrap();
        let mi = enumerate_multi_indices(1, 1).unwrap();
        match semi_exact_solve(&set, &mi, params(0.1, 1.0), None) {
            Err(Error::RankDeficient { columns }) => assert_eq!(columns, vec![1]),
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }

    #[test]
    fn multi_kernel_params() {
        let (a, b) = build_multi_kernel_params(&[0.0, 0.0, 2.0, 0.0], 2, 0.5).unwrap();
        assert!((a.alpha2 - 2f64.sqrt()).abs() < 1e-15);
        assert!((b.alpha2 - 2.0).abs() < 1e-12);
        assert_eq!(a.alpha1, 0.5);
        let pts = [0.1, 2.0, -1.0, 0.7];
        let scaled: Vec<f64> = pts.iter().map(|v| 3.0 * v).collect();
        let (c, d) = build_multi_kernel_params(&pts, 1, 1.0).unwrap();
        let (e, g) = build_multi_kernel_params(&scaled, 1, 1.0).unwrap();
        assert!((e.alpha2 / c.alpha2 - 3.0).abs() < 1e-12 && (g.alpha2 / d.alpha2 - 3.0).abs() < 1e-12);
        assert!((d.alpha2 / c.alpha2 - 2f64.sqrt()).abs() < 1e-15);
    }
}
