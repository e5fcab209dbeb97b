//! Polynomial control variates.
//!
//! A polynomial `u_θ(x) = Σ_j θ_j x^{α_j}` over all multi-indices with
//! `1 ≤ |α_j| ≤ k` is mapped through the Stein operator to
//! `g_θ(x) = θ · b(x)`, where `b_j = L x^{α_j}`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cv::{dot, ControlVariate, Trainable};
use crate::error::{ensure_finite, Error, Result};
use crate::samples::ScoredSampleSet;

/// Largest basis we are willing to enumerate.
const MAX_BASIS_SIZE: u128 = 50_000_000;

/// Multi-indices of total degree `1..=k` in graded-lexicographic order.
///
/// Within a degree, indices are sorted lexicographically with `x_1` most
/// significant and larger exponents first, e.g. `(2,0), (1,1), (0,2)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiIndexSet {
    d: usize,
    k: u32,
    alpha: Vec<Vec<u32>>,
}

impl MultiIndexSet {
    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn degree(&self) -> u32 {
        self.k
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn indices(&self) -> &[Vec<u32>] {
        &self.alpha
    }
}

/// `C(d + k, d) - 1`, or `None` on overflow.
pub fn basis_size(d: usize, k: u32) -> Option<u128> {
    let (d, k) = (d as u128, k as u128);
    let small = d.min(k);
    let mut c: u128 = 1;
    for i in 1..=small {
        c = c.checked_mul(d + k + 1 - i)? / i;
    }
    c.checked_sub(1)
}

pub fn enumerate_multi_indices(d: usize, k: u32) -> Result<MultiIndexSet> {
    if d == 0 || k == 0 {
        return Err(Error::InvalidArgument("polynomial basis needs d >= 1 and k >= 1".into()));
    }
    match basis_size(d, k) {
        Some(p) if p <= MAX_BASIS_SIZE => {}
        _ => {
            return Err(Error::InvalidArgument(format!(
                "polynomial basis for d = {d}, k = {k} exceeds {MAX_BASIS_SIZE} functions"
            )))
        }
    }
    let mut alpha = Vec::new();
    let mut current = vec![0u32; d];
    for degree in 1..=k {
        compositions(degree, 0, &mut current, &mut alpha);
    }
    Ok(MultiIndexSet { d, k, alpha })
}

fn compositions(remaining: u32, pos: usize, current: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if pos == current.len() - 1 {
        current[pos] = remaining;
        out.push(current.clone());
        current[pos] = 0;
        return;
    }
    for e in (0..=remaining).rev() {
        current[pos] = e;
        compositions(remaining - e, pos + 1, current, out);
    }
    current[pos] = 0;
}

/// `b(x)`: the Stein operator applied to each monomial `x^{α_j}`.
///
/// `b_j = Σ_l [α_l x_l^{α_l-1} s_l Π_{z≠l} x_z^{α_z} + α_l(α_l-1) x_l^{α_l-2} Π_{z≠l} x_z^{α_z}]`
/// with `s = ∇log π(x)` and `x^0 = 1`.
pub fn poly_basis(x: &[f64], score: &[f64], mi: &MultiIndexSet) -> Vec<f64> {
    let mut out = vec![0.0; mi.len()];
    poly_basis_into(x, score, mi, &mut out);
    out
}

pub(crate) fn poly_basis_into(x: &[f64], score: &[f64], mi: &MultiIndexSet, out: &mut [f64]) {
    debug_assert_eq!(x.len(), mi.d);
    debug_assert_eq!(score.len(), mi.d);
    let k = mi.k as usize;
    // powers[l][e] = x_l^e
    let powers: Vec<Vec<f64>> = x
        .iter()
        .map(|&xl| {
            let mut p = Vec::with_capacity(k + 1);
            let mut v = 1.0;
            for _ in 0..=k {
                p.push(v);
                v *= xl;
            }
            p
        })
        .collect();
    for (alpha, b) in mi.alpha.iter().zip(out.iter_mut()) {
        let mut total = 0.0;
        for (l, &a) in alpha.iter().enumerate() {
            if a == 0 {
                continue;
            }
            let others: f64 = alpha
                .iter()
                .enumerate()
                .filter(|&(z, &az)| z != l && az > 0)
                .map(|(z, &az)| powers[z][az as usize])
                .product();
            let a_f = a as f64;
            let mut term = a_f * powers[l][a as usize - 1] * score[l];
            if a >= 2 {
                term += a_f * (a_f - 1.0) * powers[l][a as usize - 2];
            }
            total += term * others;
        }
        *b = total;
    }
}

/// `g_θ(x) = θ · b(x)` with a fitted offset `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolynomialCV {
    pub multi_indices: MultiIndexSet,
    pub theta: Vec<f64>,
    pub offset: f64,
}

impl PolynomialCV {
    pub fn zeros(multi_indices: MultiIndexSet) -> Self {
        let p = multi_indices.len();
        Self {
            multi_indices,
            theta: vec![0.0; p],
            offset: 0.0,
        }
    }

    pub fn new(multi_indices: MultiIndexSet, theta: Vec<f64>, offset: f64) -> Result<Self> {
        if theta.len() != multi_indices.len() {
            return Err(Error::LengthMismatch {
                what: "theta and basis",
                left: theta.len(),
                right: multi_indices.len(),
            });
        }
        ensure_finite(&theta, "theta")?;
        Ok(Self {
            multi_indices,
            theta,
            offset,
        })
    }
}

pub fn poly_cv_eval(cv: &PolynomialCV, x: &[f64], score: &[f64]) -> f64 {
    cv.eval(x, score)
}

impl ControlVariate for PolynomialCV {
    fn dim(&self) -> usize {
        self.multi_indices.d
    }

    fn eval(&self, x: &[f64], score: &[f64]) -> f64 {
        dot(&self.theta, &poly_basis(x, score, &self.multi_indices))
    }

    fn offset(&self) -> f64 {
        self.offset
    }
}

impl Trainable for PolynomialCV {
    fn num_params(&self) -> usize {
        self.theta.len()
    }

    fn params(&self) -> Vec<f64> {
        self.theta.clone()
    }

    fn set_params(&mut self, params: &[f64]) {
        self.theta.copy_from_slice(params);
    }

    fn set_offset(&mut self, offset: f64) {
        self.offset = offset;
    }

    fn eval_with_param_grad(&self, x: &[f64], score: &[f64], grad: &mut [f64]) -> f64 {
        poly_basis_into(x, score, &self.multi_indices, grad);
        dot(&self.theta, grad)
    }

    fn is_linear(&self) -> bool {
        true
    }
}

/// Basis matrix `B` with `B[i, j] = b_j(x_i)` over the rows of `set`.
pub fn basis_matrix(set: &ScoredSampleSet, mi: &MultiIndexSet) -> DMatrix<f64> {
    let p = mi.len();
    let mut b = DMatrix::zeros(set.len(), p);
    let mut row = vec![0.0; p];
    for i in 0..set.len() {
        poly_basis_into(set.state(i), set.score(i), mi, &mut row);
        for j in 0..p {
            b[(i, j)] = row[j];
        }
    }
    b
}

/// Least-squares fit `θ = (V̂ + λI)⁻¹ Ĉ` from the centered sample covariance
/// of the basis (`V̂`) and its cross-covariance with `f` (`Ĉ`).
pub fn poly_exact_solve(train: &ScoredSampleSet, mi: &MultiIndexSet, ridge: f64) -> Result<PolynomialCV> {
    let m = train.len();
    if m < 2 {
        return Err(Error::InvalidArgument("exact polynomial solve needs at least 2 samples".into()));
    }
    if train.dim() != mi.dim() {
        return Err(Error::DimensionMismatch {
            expected: mi.dim(),
            got: train.dim(),
        });
    }
    if !(ridge >= 0.0) || !ridge.is_finite() {
        return Err(Error::InvalidArgument(format!("ridge {ridge} must be finite and >= 0")));
    }
    let f = DVector::from_column_slice(train.f_values()?);
    let b = basis_matrix(train, mi);
    let p = mi.len();

    let mut centered = b.clone();
    for j in 0..p {
        let mean = centered.column(j).mean();
        centered.column_mut(j).add_scalar_mut(-mean);
    }
    let f_mean = f.mean();
    let f_centered = f.add_scalar(-f_mean);
    let scale = 1.0 / (m - 1) as f64;
    let mut v = centered.tr_mul(&centered) * scale;
    let c = centered.tr_mul(&f_centered) * scale;
    for j in 0..p {
        v[(j, j)] += ridge;
    }

    let singular = || {
        Error::Singular(
            "basis covariance is singular; use more training samples or a ridge penalty lambda > 0".into(),
        )
    };
    let chol = nalgebra::Cholesky::new(v.clone()).ok_or_else(singular)?;
    let diag = chol.l_dirty().diagonal();
    let (dmin, dmax) = diag.iter().fold((f64::INFINITY, 0f64), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    if ridge == 0.0 && dmin <= 1e-7 * dmax {
        return Err(singular());
    }
    let theta = chol.solve(&c);
    let fitted = &b * &theta;
    let offset = (&f - fitted).mean();
    PolynomialCV::new(mi.clone(), theta.as_slice().to_vec(), offset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::{GaussianTarget, Target};

    #[test]
    fn enumeration_sizes() {
        let mi = enumerate_multi_indices(1, 2).unwrap();
        assert_eq!(mi.indices(), &[vec![1], vec![2]]);
        assert_eq!(enumerate_multi_indices(2, 2).unwrap().len(), 5);
        assert_eq!(enumerate_multi_indices(3, 3).unwrap().len(), 19);
        assert_eq!(basis_size(3, 3), Some(19));
        assert!(enumerate_multi_indices(0, 2).is_err());
        assert!(enumerate_multi_indices(1000, 20).is_err());
    }

    #[test]
    fn graded_lex_order() {
        let mi = enumerate_multi_indices(2, 2).unwrap();
        assert_eq!(
            mi.indices(),
            &[vec![1, 0], vec![0, 1], vec![2, 0], vec![1, 1], vec![0, 2]]
        );
        assert_eq!(mi, enumerate_multi_indices(2, 2).unwrap());
    }

    #[test]
    fn multi_index_rows_are_unique_and_bounded() {
        let mi = enumerate_multi_indices(4, 3).unwrap();
        let mut seen = std::collections::HashSet::new();
        for a in mi.indices() {
            let s: u32 = a.iter().sum();
            assert!((1..=3).contains(&s));
            assert!(seen.insert(a.clone()));
        }
        assert_eq!(mi.len() as u128, basis_size(4, 3).unwrap());
    }

    #[test]
    fn basis_hand_values() {
        let mi1 = enumerate_multi_indices(1, 1).unwrap();
        assert_eq!(poly_basis(&[2.0], &[-2.0], &mi1), vec![-2.0]);
        let mi2 = enumerate_multi_indices(1, 2).unwrap();
        let x = 1.7;
        let b = poly_basis(&[x], &[-x], &mi2);
        assert!((b[1] - (2.0 - 2.0 * x * x)).abs() < 1e-14);
    }

    #[test]
    fn basis_vanishes_for_zero_score_and_multilinear_indices() {
        let mi = enumerate_multi_indices(3, 3).unwrap();
        let b = poly_basis(&[0.4, -1.3, 2.2], &[0.0; 3], &mi);
        for (alpha, v) in mi.indices().iter().zip(&b) {
            if alpha.iter().all(|&a| a <= 1) {
                assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn eval_examples() {
        let mi = enumerate_multi_indices(1, 1).unwrap();
        let zero = PolynomialCV::zeros(mi.clone());
        assert_eq!(zero.eval(&[1.3], &[-1.3]), 0.0);
        let cv = PolynomialCV::new(mi, vec![-1.0], 0.0).unwrap();
        assert!((poly_cv_eval(&cv, &[0.8], &[-0.8]) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn exact_solve_recovers_sum_of_coordinates() {
        let d = 3;
        let t = GaussianTarget::standard(d).unwrap();
        let train = t.sample(1000, 1).unwrap().with_f(|x| x.iter().sum()).unwrap();
        let mi = enumerate_multi_indices(d, 1).unwrap();
        let cv = poly_exact_solve(&train, &mi, 0.0).unwrap();
        // b_j = -x_j, so f = Σx_j is reproduced by θ = -1.
        for th in &cv.theta {
            assert!((th + 1.0).abs() < 1e-10, "{th}");
        }
        let f = train.f_values().unwrap();
        let resid: Vec<f64> = (0..train.len())
            .map(|i| f[i] - cv.offset - cv.eval(train.state(i), train.score(i)))
            .collect();
        let var = crate::estimator::estimate_mc(&resid).unwrap().residual_sample_variance;
        assert!(var <= 1e-16, "{var}");
    }

    #[test]
    fn constant_integrand_with_ridge() {
        let t = GaussianTarget::standard(2).unwrap();
        let train = t.sample(200, 2).unwrap().with_f(|_| 4.5).unwrap();
        let mi = enumerate_multi_indices(2, 2).unwrap();
        let cv = poly_exact_solve(&train, &mi, 1e-3).unwrap();
        assert!(cv.theta.iter().all(|t| t.abs() < 1e-12));
        assert!((cv.offset - 4.5).abs() < 1e-12);
    }

    #[test]
    fn singular_without_ridge_is_reported() {
        // Identical states make every centered basis column zero.
        let set = ScoredSampleSet::new(1, vec![0.5; 10], vec![-0.5; 10], Some(vec![1.0; 10])).unwrap();
        let mi = enumerate_multi_indices(1, 2).unwrap();
        match poly_exact_solve(&set, &mi, 0.0) {
            Err(Error::Singular(msg)) => assert!(msg.contains("lambda")),
            other => panic!("expected singular error, got {other:?}"),
        }
        assert!(poly_exact_solve(&set, &mi, 1e-2).is_ok());
    }
}
