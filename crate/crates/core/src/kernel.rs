//! Kernel control variates built from the Stein kernel.
//!
//! The base kernel is
//! `k(x, y) = (1 + α₁‖x‖² + α₁‖y‖²)⁻¹ exp(-‖x - y‖² / (2α₂²))`
//! and the Stein kernel `k₀` applies the Langevin Stein operator in both
//! arguments, so every translate `k₀(·, y)` integrates to zero.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::cv::{ControlVariate, StepGeometry, Trainable};
use crate::error::{ensure_finite, Error, Result};
use crate::samples::ScoredSampleSet;

/// Default inverse-quadratic weight grid searched by cross-validation.
pub const ALPHA1_GRID: [f64; 9] = [1e6, 1e5, 1e4, 1e3, 1e2, 1e1, 1.0, 1e-1, 1e-2];

/// Relative jitter applied to the Stein Gram matrix by default.
pub const DEFAULT_RELATIVE_JITTER: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaseKernelParams {
    pub alpha1: f64,
    /// Length-scale.
    pub alpha2: f64,
}

impl BaseKernelParams {
    pub fn new(alpha1: f64, alpha2: f64) -> Result<Self> {
        if !(alpha1 >= 0.0) || !alpha1.is_finite() {
            return Err(Error::InvalidArgument(format!("alpha1 = {alpha1} must be finite and >= 0")));
        }
        if !(alpha2 > 0.0) || !alpha2.is_finite() {
            return Err(Error::InvalidArgument(format!("alpha2 = {alpha2} must be finite and > 0")));
        }
        Ok(Self { alpha1, alpha2 })
    }
}

pub fn base_kernel(x: &[f64], y: &[f64], params: &BaseKernelParams) -> f64 {
    let (mut xx, mut yy, mut dd) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        xx += a * a;
        yy += b * b;
        dd += (a - b) * (a - b);
    }
    let p = 1.0 / (1.0 + params.alpha1 * (xx + yy));
    p * (-dd / (2.0 * params.alpha2 * params.alpha2)).exp()
}

/// `∇ₓk`, `∇ᵧk` and `∇ₓ·∇ᵧk = Σ_l ∂²k/∂x_l∂y_l`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelDerivatives {
    pub value: f64,
    pub grad_x: Vec<f64>,
    pub grad_y: Vec<f64>,
    pub mixed_trace: f64,
}

/// Analytic derivatives via the product rule on the prefactor
/// `p = (1 + α₁‖x‖² + α₁‖y‖²)⁻¹` and the Gaussian factor `e`:
///
/// * `∇ₓk = k (-2α₁ p x - (x - y)/α₂²)`
/// * `∇ᵧk = k (-2α₁ p y + (x - y)/α₂²)`
/// * `∇ₓ·∇ᵧk = e (8α₁² p³ x·y - 2α₁ p² ‖x-y‖²/α₂² + p (d/α₂² - ‖x-y‖²/α₂⁴))`
pub fn base_kernel_derivatives(x: &[f64], y: &[f64], params: &BaseKernelParams) -> KernelDerivatives {
    let d = x.len() as f64;
    let a1 = params.alpha1;
    let l2 = params.alpha2 * params.alpha2;
    let (mut xx, mut yy, mut xy, mut dd) = (0.0, 0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        xx += a * a;
        yy += b * b;
        xy += a * b;
        dd += (a - b) * (a - b);
    }
    let p = 1.0 / (1.0 + a1 * (xx + yy));
    let e = (-dd / (2.0 * l2)).exp();
    let k = p * e;
    let grad_x = x.iter().zip(y).map(|(a, b)| k * (-2.0 * a1 * p * a - (a - b) / l2)).collect();
    let grad_y = x.iter().zip(y).map(|(a, b)| k * (-2.0 * a1 * p * b + (a - b) / l2)).collect();
    let mixed_trace =
        e * (8.0 * a1 * a1 * p * p * p * xy - 2.0 * a1 * p * p * dd / l2 + p * (d / l2 - dd / (l2 * l2)));
    KernelDerivatives {
        value: k,
        grad_x,
        grad_y,
        mixed_trace,
    }
}

/// `k₀(x, y) = ∇ₓ·∇ᵧk + ∇ₓk·sᵧ + ∇ᵧk·sₓ + k sₓ·sᵧ` with `s = ∇log π`.
pub fn stein_kernel_k0(x: &[f64], y: &[f64], score_x: &[f64], score_y: &[f64], params: &BaseKernelParams) -> f64 {
    let d = x.len() as f64;
    let a1 = params.alpha1;
    let l2 = params.alpha2 * params.alpha2;
    let (mut xx, mut yy, mut xy, mut dd) = (0.0, 0.0, 0.0, 0.0);
    let (mut x_sy, mut y_sx, mut diff_sy, mut diff_sx, mut sxsy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for l in 0..x.len() {
        let (a, b, sa, sb) = (x[l], y[l], score_x[l], score_y[l]);
        let diff = a - b;
        xx += a * a;
        yy += b * b;
        xy += a * b;
        dd += diff * diff;
        x_sy += a * sb;
        y_sx += b * sa;
        diff_sy += diff * sb;
        diff_sx += diff * sa;
        sxsy += sa * sb;
    }
    let p = 1.0 / (1.0 + a1 * (xx + yy));
    let e = (-dd / (2.0 * l2)).exp();
    let k = p * e;
    let trace = e * (8.0 * a1 * a1 * p * p * p * xy - 2.0 * a1 * p * p * dd / l2 + p * (d / l2 - dd / (l2 * l2)));
    let gx_sy = k * (-2.0 * a1 * p * x_sy - diff_sy / l2);
    let gy_sx = k * (-2.0 * a1 * p * y_sx + diff_sx / l2);
    trace + gx_sy + gy_sx + k * sxsy
}

/// Stein-kernel translates centered at a set of scored points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelBasis {
    pub params: BaseKernelParams,
    d: usize,
    centers: Vec<f64>,
    center_scores: Vec<f64>,
}

impl KernelBasis {
    pub fn new(params: BaseKernelParams, centers: &ScoredSampleSet) -> Self {
        Self {
            params,
            d: centers.dim(),
            centers: centers.states().to_vec(),
            center_scores: centers.scores().to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.centers.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn center(&self, j: usize) -> &[f64] {
        &self.centers[j * self.d..(j + 1) * self.d]
    }

    pub fn center_score(&self, j: usize) -> &[f64] {
        &self.center_scores[j * self.d..(j + 1) * self.d]
    }

    /// `k₀(x, X)` written into `out`.
    pub fn features_into(&self, x: &[f64], score: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = stein_kernel_k0(x, self.center(j), score, self.center_score(j), &self.params);
        }
    }

    pub fn weighted_sum(&self, theta: &[f64], x: &[f64], score: &[f64]) -> f64 {
        theta
            .iter()
            .enumerate()
            .map(|(j, t)| t * stein_kernel_k0(x, self.center(j), score, self.center_score(j), &self.params))
            .sum()
    }

    /// `k₀(X, X)` over the centers.
    pub fn gram(&self) -> DMatrix<f64> {
        let m = self.len();
        let mut g = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..=i {
                let v = stein_kernel_k0(
                    self.center(i),
                    self.center(j),
                    self.center_score(i),
                    self.center_score(j),
                    &self.params,
                );
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        g
    }
}

/// `g(x) = Σ_i θ_i k₀(x, x_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelCV {
    pub basis: KernelBasis,
    pub theta: Vec<f64>,
    pub offset: f64,
    #[serde(default)]
    pub geometry: StepGeometry,
}

impl KernelCV {
    pub fn zeros(basis: KernelBasis) -> Self {
        let m = basis.len();
        Self {
            basis,
            theta: vec![0.0; m],
            offset: 0.0,
            geometry: StepGeometry::default(),
        }
    }

    pub fn with_geometry(mut self, geometry: StepGeometry) -> Self {
        self.geometry = geometry;
        self
    }
}

pub fn kernel_cv_eval(cv: &KernelCV, x: &[f64], score: &[f64]) -> f64 {
    cv.eval(x, score)
}

impl ControlVariate for KernelCV {
    fn dim(&self) -> usize {
        self.basis.d
    }

    fn eval(&self, x: &[f64], score: &[f64]) -> f64 {
        self.basis.weighted_sum(&self.theta, x, score)
    }

    fn offset(&self) -> f64 {
        self.offset
    }
}

impl Trainable for KernelCV {
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
        self.basis.features_into(x, score, grad);
        crate::cv::dot(&self.theta, grad)
    }

    fn is_linear(&self) -> bool {
        true
    }

    fn is_euclidean(&self) -> bool {
        self.geometry == StepGeometry::Euclidean
    }

    fn eval_with_direction(&self, row: usize, x: &[f64], score: &[f64], dir: &mut [f64]) -> f64 {
        match self.geometry {
            StepGeometry::Euclidean => self.eval_with_param_grad(x, score, dir),
            StepGeometry::Rkhs => {
                dir.fill(0.0);
                let c = (self.basis.center(row), self.basis.center_score(row));
                let diag = stein_kernel_k0(c.0, c.0, c.1, c.1, &self.basis.params);
                dir[row] = if diag > 0.0 { 1.0 / diag } else { 1.0 };
                self.basis.weighted_sum(&self.theta, x, score)
            }
        }
    }
}

/// Jitter `ε` for `k₀(X, X) + εI`: `relative × mean diagonal`.
pub fn default_jitter(gram: &DMatrix<f64>) -> f64 {
    DEFAULT_RELATIVE_JITTER * gram.diagonal().mean()
}

pub(crate) fn factor_gram(mut gram: DMatrix<f64>, jitter: f64) -> Result<Cholesky<f64, Dyn>> {
    if !(jitter >= 0.0) || !jitter.is_finite() {
        return Err(Error::InvalidArgument(format!("jitter {jitter} must be finite and >= 0")));
    }
    for i in 0..gram.nrows() {
        gram[(i, i)] += jitter;
    }
    Cholesky::new(gram).ok_or_else(|| {
        Error::NotPositiveDefinite(format!(
            "Stein Gram matrix with jitter {jitter:e}; increase the jitter (default is {DEFAULT_RELATIVE_JITTER:e} x mean diagonal)"
        ))
    })
}

const MAX_REFINEMENT_ITERATIONS: usize = 200;
const REFINEMENT_TOLERANCE: f64 = 1e-9;

/// Solves `gram · x = rhs` by conjugate gradients preconditioned with the
/// jittered factor `(K + εI)⁻¹`, started from the jittered solution. Returns
/// the iterate with the smallest residual, stopping once it is below
/// `REFINEMENT_TOLERANCE` relative to `rhs`. Directions with eigenvalues far
/// below `ε` may keep part of the jitter's damping.
pub(crate) fn refined_solve(chol: &Cholesky<f64, Dyn>, gram: &DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    let tolerance = REFINEMENT_TOLERANCE * rhs.amax().max(1.0);
    let mut x = chol.solve(rhs);
    let mut r = rhs - gram * &x;
    let mut best = (r.amax(), x.clone());
    let mut z = chol.solve(&r);
    let mut p = z.clone();
    let mut rz = r.dot(&z);
    for _ in 0..MAX_REFINEMENT_ITERATIONS {
        if best.0 <= tolerance || !(rz > 0.0) {
            break;
        }
        let kp = gram * &p;
        let pkp = p.dot(&kp);
        if !(pkp > 0.0) {
            break;
        }
        let step = rz / pkp;
        x.axpy(step, &p, 1.0);
        r.axpy(-step, &kp, 1.0);
        // Recompute the true residual so rounding in the recurrence cannot
        // report progress that is not there.
        let true_norm = (rhs - gram * &x).amax();
        if true_norm < best.0 {
            best = (true_norm, x.clone());
        }
        z = chol.solve(&r);
        let rz_next = r.dot(&z);
        p = &z + &p * (rz_next / rz);
        rz = rz_next;
    }
    best.1
}

/// Solves `[K B; Bᵀ 0] [θ; β] = [f; 0]` for `K = gram` (full column rank `B`).
///
/// Null-space form: with `B = QR` and `P = I - QQᵀ`, `θ` solves
/// `(PKP + s QQᵀ) θ = P f` with `s` the mean diagonal of `K`, so `Bᵀθ = 0` and
/// `P(Kθ - f) = 0`; then `R β = Qᵀ(f - Kθ)`. The reduced matrix is factored
/// with `jitter` on its diagonal and the solve is refined against it.
pub(crate) fn constrained_interpolation(
    gram: &DMatrix<f64>,
    b: &DMatrix<f64>,
    f: &DVector<f64>,
    jitter: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let qr = b.clone().qr();
    let (q, r) = (qr.q(), qr.r());
    let kq = gram * &q;
    let qtkq = q.tr_mul(&kq);
    let s = gram.diagonal().mean().max(f64::MIN_POSITIVE);
    let qkq_t = &q * &qtkq;
    let mut reduced = gram - &q * kq.transpose() - &kq * q.transpose() + &qkq_t * q.transpose() + &q * q.transpose() * s;
    reduced = (&reduced + reduced.transpose()) * 0.5;
    let pf = f - &q * q.tr_mul(f);
    let chol = factor_gram(reduced.clone(), jitter)?;
    let mut theta = refined_solve(&chol, &reduced, &pf);
    theta -= &q * q.tr_mul(&theta);
    let beta = r
        .solve_upper_triangular(&q.tr_mul(&(f - gram * &theta)))
        .ok_or_else(|| Error::Singular("constraint block".into()))?;
    Ok((theta, beta))
}

/// Control functional: the kernel interpolant of `f` with its constant
/// projected out,
/// `θ = k₀(X,X)⁻¹ (f - c 1)`, `c = 1ᵀk₀⁻¹f / 1ᵀk₀⁻¹1`.
///
/// `jitter = None` uses [`default_jitter`].
pub fn control_functional_solve(
    train: &ScoredSampleSet,
    params: BaseKernelParams,
    jitter: Option<f64>,
) -> Result<KernelCV> {
    if train.len() < 2 {
        return Err(Error::InvalidArgument("control functional needs at least 2 samples".into()));
    }
    let f = DVector::from_column_slice(train.f_values()?);
    let basis = KernelBasis::new(params, train);
    let gram = basis.gram();
    let jitter = jitter.unwrap_or_else(|| default_jitter(&gram));
    let ones = DMatrix::from_element(train.len(), 1, 1.0);
    let (theta, beta) = constrained_interpolation(&gram, &ones, &f, jitter)?;
    let c = beta[0];
    ensure_finite(theta.as_slice(), "control functional weights")?;
    Ok(KernelCV {
        basis,
        theta: theta.as_slice().to_vec(),
        offset: c,
        geometry: StepGeometry::default(),
    })
}

/// `ℓ = sqrt(½ median{‖x_i - x_j‖² : i < j})` over the rows of `states`.
pub fn median_heuristic(states: &[f64], d: usize) -> Result<f64> {
    if d == 0 || states.len() % d != 0 {
        return Err(Error::InvalidArgument("state buffer does not match dimension".into()));
    }
    let n = states.len() / d;
    if n < 2 {
        return Err(Error::InvalidArgument("median heuristic needs at least 2 points".into()));
    }
    let row = |i: usize| &states[i * d..(i + 1) * d];
    let mut sq = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            sq.push(row(i).iter().zip(row(j)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>());
        }
    }
    let len = sq.len();
    let mid = len / 2;
    let (_, upper, _) = sq.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    let median = if len % 2 == 1 {
        upper
    } else {
        let lower = sq[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    };
    if !(median > 0.0) {
        return Err(Error::InvalidArgument(
            "median heuristic is undefined: the median pairwise distance is zero".into(),
        ));
    }
    Ok((0.5 * median).sqrt())
}
