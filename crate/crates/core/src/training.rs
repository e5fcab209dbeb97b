//! Objectives, minibatch SGD, cross-validation and the design-matrix
//! spectrum used to pick the inverse-time learning rate.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cv::{ControlVariate, Trainable};
use crate::error::{Error, Result};
use crate::samples::ScoredSampleSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// `(1/b) Σ (f - g - c)²`; the offset `c` is trained.
    #[default]
    LeastSquares,
    /// `2/(b(b-1)) Σ_{i>j} (r_i - r_j)²` with `r = f - g`; no offset.
    Variance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regularizer {
    /// `λ ‖θ‖²`.
    #[default]
    L2Theta,
    /// `λ · mean(g²)` over the batch.
    MeanGSquared,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    /// `α_t = β / (γ + t)`, `t = 1, 2, …`. With `beta = None` the rate comes
    /// from [`design_matrix_spectrum`] when the family is linear and small
    /// enough, else `0.1 / mean ‖ψ‖²`.
    InverseTime {
        #[serde(default)]
        beta: Option<f64>,
        #[serde(default = "default_gamma")]
        gamma: f64,
    },
    Constant { rate: f64 },
    /// Constant per-block rates `scale / (B · mean ⟨direction, gradient⟩)`
    /// over `B` blocks (the offset counts as one block with norm 1), the
    /// norms estimated at the initial parameters.
    Normalized { scale: f64 },
}

fn default_gamma() -> f64 {
    DEFAULT_GAMMA
}

pub const DEFAULT_GAMMA: f64 = 10.0;
pub const DEFAULT_BATCH_SIZE: usize = 8;
pub const DEFAULT_EPOCHS: usize = 25;
/// Rows used to estimate the per-block norms of [`Schedule::Normalized`].
const NORM_PROBE_ROWS: usize = 64;
/// Largest family for which the automatic `β` runs an eigen-solve.
const MAX_SPECTRUM_PARAMS: usize = 2000;

impl Default for Schedule {
    fn default() -> Self {
        Schedule::InverseTime {
            beta: None,
            gamma: DEFAULT_GAMMA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub objective: Objective,
    pub regularizer: Regularizer,
    pub lambda: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub schedule: Schedule,
    pub seed: u64,
    /// Overrides `⌈m/b⌉` steps per epoch, giving a step budget independent of `m`.
    pub steps_per_epoch: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            objective: Objective::LeastSquares,
            regularizer: Regularizer::L2Theta,
            lambda: 0.0,
            batch_size: DEFAULT_BATCH_SIZE,
            epochs: DEFAULT_EPOCHS,
            schedule: Schedule::default(),
            seed: 0,
            steps_per_epoch: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad(format!("lambda = {} must be finite and >= 0", self.lambda));
        }
        if self.batch_size < 2 {
            return bad(format!("batch_size = {} must be at least 2", self.batch_size));
        }
        if self.epochs < 1 {
            return bad("epochs must be at least 1".into());
        }
        if self.steps_per_epoch == Some(0) {
            return bad("steps_per_epoch must be at least 1".into());
        }
        let positive = |v: f64| v > 0.0 && v.is_finite();
        match self.schedule {
            Schedule::InverseTime { beta, gamma } => {
                if beta.is_some_and(|b| !positive(b)) || !positive(gamma) {
                    return bad("inverse_time needs beta > 0 and gamma > 0".into());
                }
            }
            Schedule::Constant { rate } if !positive(rate) => return bad("constant rate must be > 0".into()),
            Schedule::Normalized { scale } if !positive(scale) => return bad("normalized scale must be > 0".into()),
            _ => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub params: Vec<f64>,
    pub offset: f64,
    /// Mean minibatch objective (regularizer included) per epoch.
    pub epoch_objective: Vec<f64>,
    pub wall_seconds: f64,
    pub steps: usize,
    /// The `β` actually used by an inverse-time schedule.
    pub beta: Option<f64>,
    pub config: TrainConfig,
}

pub fn objective_least_squares(residuals: &[f64]) -> Result<f64> {
    if residuals.is_empty() {
        return Err(Error::Empty("residuals"));
    }
    Ok(residuals.iter().map(|r| r * r).sum::<f64>() / residuals.len() as f64)
}

/// Uses `Σ_{i>j} (r_i - r_j)² = b Σ r² - (Σ r)²`. The value is twice the
/// unbiased sample variance of the residuals.
pub fn objective_variance(residuals: &[f64]) -> Result<f64> {
    let b = residuals.len();
    if b < 2 {
        return Err(Error::InvalidArgument("the variance objective needs at least 2 residuals".into()));
    }
    let mean = residuals.iter().sum::<f64>() / b as f64;
    // Centered form of the same identity, for accuracy.
    let centered: f64 = residuals.iter().map(|r| (r - mean) * (r - mean)).sum();
    let bf = b as f64;
    Ok(2.0 / (bf * (bf - 1.0)) * (bf * centered))
}

/// Value and gradient of an objective plus regularizer on a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveGradient {
    pub value: f64,
    pub params: Vec<f64>,
    /// `∂/∂c`; zero for the variance objective.
    pub offset: f64,
}

fn accumulate<M: Trainable + ?Sized>(
    model: &M,
    set: &ScoredSampleSet,
    rows: &[usize],
    objective: Objective,
    regularizer: Regularizer,
    lambda: f64,
    along_direction: bool,
    out: &mut ObjectiveGradient,
    scratch: &mut Vec<f64>,
) -> Result<()> {
    let f = set.f_values()?;
    let p = model.num_params();
    let b = rows.len();
    let bf = b as f64;
    let c = match objective {
        Objective::LeastSquares => model.offset(),
        Objective::Variance => 0.0,
    };
    scratch.resize(p * b, 0.0);
    let mut g = Vec::with_capacity(b);
    for (k, &i) in rows.iter().enumerate() {
        let dir = &mut scratch[k * p..(k + 1) * p];
        let gi = if along_direction {
            model.eval_with_direction(i, set.state(i), set.score(i), dir)
        } else {
            model.eval_with_param_grad(set.state(i), set.score(i), dir)
        };
        g.push(gi);
    }
    let r: Vec<f64> = rows.iter().zip(&g).map(|(&i, gi)| f[i] - gi - c).collect();
    let (mut value, mut dg): (f64, Vec<f64>) = match objective {
        Objective::LeastSquares => (objective_least_squares(&r)?, r.iter().map(|ri| -2.0 * ri / bf).collect()),
        Objective::Variance => {
            let mean = r.iter().sum::<f64>() / bf;
            (
                objective_variance(&r)?,
                r.iter().map(|ri| -4.0 / (bf - 1.0) * (ri - mean)).collect(),
            )
        }
    };
    out.offset = match objective {
        Objective::LeastSquares => -2.0 / bf * r.iter().sum::<f64>(),
        Objective::Variance => 0.0,
    };
    out.params.clear();
    out.params.resize(p, 0.0);
    if lambda > 0.0 {
        match regularizer {
            Regularizer::L2Theta => {
                let theta = model.params();
                value += lambda * theta.iter().map(|t| t * t).sum::<f64>();
                model.l2_direction(&theta, &mut out.params);
                for v in out.params.iter_mut() {
                    *v *= lambda;
                }
            }
            Regularizer::MeanGSquared => {
                value += lambda * g.iter().map(|v| v * v).sum::<f64>() / bf;
                for (d, gi) in dg.iter_mut().zip(&g) {
                    *d += 2.0 * lambda * gi / bf;
                }
            }
        }
    }
    for (k, dk) in dg.iter().enumerate() {
        for (o, v) in out.params.iter_mut().zip(&scratch[k * p..(k + 1) * p]) {
            *o += dk * v;
        }
    }
    out.value = value;
    Ok(())
}

/// Objective plus `λ Ω` on the given rows, with its exact parameter gradient.
pub fn batch_objective_gradient<M: Trainable + ?Sized>(
    model: &M,
    set: &ScoredSampleSet,
    rows: &[usize],
    objective: Objective,
    regularizer: Regularizer,
    lambda: f64,
) -> Result<ObjectiveGradient> {
    if rows.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let mut out = ObjectiveGradient {
        value: 0.0,
        params: Vec::new(),
        offset: 0.0,
    };
    accumulate(model, set, rows, objective, regularizer, lambda, false, &mut out, &mut Vec::new())?;
    Ok(out)
}

/// Unregularized objective of a model over every row of `set`.
pub fn objective_on_set<M: ControlVariate + ?Sized>(model: &M, set: &ScoredSampleSet, objective: Objective) -> Result<f64> {
    let f = set.f_values()?;
    let c = match objective {
        Objective::LeastSquares => model.offset(),
        Objective::Variance => 0.0,
    };
    let r: Vec<f64> = (0..set.len()).map(|i| f[i] - model.eval(set.state(i), set.score(i)) - c).collect();
    match objective {
        Objective::LeastSquares => objective_least_squares(&r),
        Objective::Variance => objective_variance(&r),
    }
}

/// Extreme eigenvalues of `M = (1/m) ΨᵀΨ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// `1 / σ_min`.
    pub suggested_beta: f64,
}

/// Spectrum of the empirical Gram matrix of the columns of `psi` (rows are samples).
pub fn spectrum_of_features(psi: &DMatrix<f64>) -> Result<Spectrum> {
    let (m, p) = psi.shape();
    if p == 0 {
        return Err(Error::Empty("basis functions"));
    }
    if p > m {
        return Err(Error::InvalidArgument(format!(
            "{p} basis functions exceed {m} samples; the design matrix is singular"
        )));
    }
    let mut gram = psi.tr_mul(psi) / m as f64;
    gram = (&gram + gram.transpose()) * 0.5;
    let eig = gram.symmetric_eigen();
    let sigma_min = eig.eigenvalues.min().max(0.0);
    let sigma_max = eig.eigenvalues.max();
    Ok(Spectrum {
        sigma_min,
        sigma_max,
        suggested_beta: 1.0 / sigma_min,
    })
}

/// Design matrix `Ψ` of a linear family over `train`, with the constant
/// `ψ₀ = 1` as its first column when `include_constant`.
pub fn design_matrix<M: Trainable + ?Sized>(model: &M, train: &ScoredSampleSet, include_constant: bool) -> DMatrix<f64> {
    let p = model.num_params();
    let shift = usize::from(include_constant);
    let mut psi = DMatrix::zeros(train.len(), p + shift);
    let mut row = vec![0.0; p];
    for i in 0..train.len() {
        model.eval_with_param_grad(train.state(i), train.score(i), &mut row);
        if include_constant {
            psi[(i, 0)] = 1.0;
        }
        for (j, v) in row.iter().enumerate() {
            psi[(i, j + shift)] = *v;
        }
    }
    psi
}

pub fn design_matrix_spectrum<M: Trainable + ?Sized>(
    model: &M,
    train: &ScoredSampleSet,
    include_constant: bool,
) -> Result<Spectrum> {
    if !model.is_linear() {
        return Err(Error::InvalidArgument("the design matrix needs a linear family".into()));
    }
    spectrum_of_features(&design_matrix(model, train, include_constant))
}

/// Mean of `⟨direction, gradient⟩` per block over a few rows.
fn block_norms<M: Trainable + ?Sized>(
    model: &M,
    train: &ScoredSampleSet,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let p = model.num_params();
    let blocks = model.blocks();
    let probe: Vec<usize> = if train.len() <= NORM_PROBE_ROWS {
        (0..train.len()).collect()
    } else {
        (0..NORM_PROBE_ROWS).map(|_| rng.random_range(0..train.len())).collect()
    };
    let mut dir = vec![0.0; p];
    let mut grad = vec![0.0; p];
    let mut norms = vec![0.0f64; blocks.len()];
    for &i in &probe {
        model.eval_with_direction(i, train.state(i), train.score(i), &mut dir);
        model.eval_with_param_grad(train.state(i), train.score(i), &mut grad);
        for (n, block) in norms.iter_mut().zip(&blocks) {
            *n = n.max(block.clone().map(|j| dir[j] * grad[j]).sum::<f64>());
        }
    }
    norms
}

/// Per-parameter rate multipliers and the offset multiplier, plus `β`.
fn resolve_rates<M: Trainable + ?Sized>(
    model: &M,
    train: &ScoredSampleSet,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<f64>, f64, Option<f64>)> {
    let p = model.num_params();
    let with_offset = config.objective == Objective::LeastSquares;
    match config.schedule {
        Schedule::Constant { rate } => Ok((vec![rate; p], rate, None)),
        Schedule::InverseTime { beta: Some(beta), .. } => Ok((vec![1.0; p], 1.0, Some(beta))),
        Schedule::InverseTime { beta: None, .. } => {
            let spectral = model.is_linear()
                && model.is_euclidean()
                && p + usize::from(with_offset) <= train.len()
                && p <= MAX_SPECTRUM_PARAMS;
            if spectral {
                let s = design_matrix_spectrum(model, train, with_offset)?;
                if s.sigma_min > 1e-12 * s.sigma_max {
                    return Ok((vec![1.0; p], 1.0, Some(s.suggested_beta)));
                }
            }
            let norms = block_norms(model, train, rng);
            let mean_sq = norms.iter().sum::<f64>() + if with_offset { 1.0 } else { 0.0 };
            if !(mean_sq > 0.0) {
                return Err(Error::InvalidArgument("basis functions vanish on the training set".into()));
            }
            Ok((vec![1.0; p], 1.0, Some(0.1 / mean_sq)))
        }
        Schedule::Normalized { scale } => {
            let blocks = model.blocks();
            let norms = block_norms(model, train, rng);
            let count = (blocks.len() + usize::from(with_offset)) as f64;
            let mut rates = vec![0.0; p];
            for (block, n) in blocks.iter().zip(&norms) {
                let r = if *n > 0.0 { scale / (count * n) } else { 0.0 };
                for j in block.clone() {
                    rates[j] = r;
                }
            }
            Ok((rates, scale / count, None))
        }
    }
}

/// Minibatch SGD on `model`, drawing `b` rows with replacement per step.
///
/// For the least-squares objective the offset is a trained parameter started
/// at the mean of `f` over `train`; for the variance objective it is left
/// untouched. The model holds the final parameters on return.
pub fn sgd_train<M: Trainable + ?Sized>(model: &mut M, train: &ScoredSampleSet, config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let f = train.f_values()?;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let with_offset = config.objective == Objective::LeastSquares;
    if with_offset {
        model.set_offset(f.iter().sum::<f64>() / f.len() as f64);
    }
    let (rates, offset_rate, beta) = resolve_rates(model, train, config, &mut rng)?;
    let b = config.batch_size;
    let steps_per_epoch = config.steps_per_epoch.unwrap_or(train.len().div_ceil(b));
    let mut params = model.params();
    let mut offset = model.offset();
    let mut grad = ObjectiveGradient {
        value: 0.0,
        params: Vec::new(),
        offset: 0.0,
    };
    let mut scratch = Vec::new();
    let mut rows = vec![0usize; b];
    let mut trace = Vec::with_capacity(config.epochs);
    let mut t = 0usize;
    for _ in 0..config.epochs {
        let mut epoch_sum = 0.0;
        for _ in 0..steps_per_epoch {
            t += 1;
            for r in rows.iter_mut() {
                *r = rng.random_range(0..train.len());
            }
            accumulate(&*model, train, &rows, config.objective, config.regularizer, config.lambda, true, &mut grad, &mut scratch)?;
            if !grad.value.is_finite() {
                return Err(Error::Diverged {
                    step: t,
                    what: "objective".into(),
                });
            }
            epoch_sum += grad.value;
            let alpha = match config.schedule {
                Schedule::InverseTime { gamma, .. } => beta.unwrap_or(1.0) / (gamma + t as f64),
                _ => 1.0,
            };
            for ((p, g), r) in params.iter_mut().zip(&grad.params).zip(&rates) {
                *p -= alpha * r * g;
            }
            if params.iter().any(|p| !p.is_finite()) {
                return Err(Error::Diverged {
                    step: t,
                    what: "parameters".into(),
                });
            }
            model.set_params(&params);
            if with_offset {
                offset -= alpha * offset_rate * grad.offset;
                model.set_offset(offset);
            }
        }
        trace.push(epoch_sum / steps_per_epoch as f64);
    }
    Ok(TrainReport {
        params,
        offset: model.offset(),
        epoch_objective: trace,
        wall_seconds: start.elapsed().as_secs_f64(),
        steps: t,
        beta,
        config: config.clone(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossValidation<H> {
    pub best: H,
    pub best_index: usize,
    /// Mean held-out least-squares objective per grid point (`inf` when a fit failed).
    pub scores: Vec<f64>,
}

/// K-fold cross-validation over `grid`.
///
/// Rows are shuffled with `seed` and cut into contiguous folds; each grid
/// point is scored by the mean held-out least-squares objective of the model
/// `fit` returns. Ties go to the larger `strength` (stronger regularization),
/// then to the earlier grid point.
pub fn cross_validate<H, C, S, F>(
    train: &ScoredSampleSet,
    grid: &[H],
    folds: usize,
    seed: u64,
    strength: S,
    fit: F,
) -> Result<CrossValidation<H>>
where
    H: Clone,
    C: ControlVariate,
    S: Fn(&H) -> f64,
    F: Fn(&H, &ScoredSampleSet) -> Result<C>,
{
    if grid.is_empty() {
        return Err(Error::Empty("hyperparameter grid"));
    }
    if folds < 2 || train.len() < folds {
        return Err(Error::InvalidArgument(format!(
            "{folds}-fold cross-validation needs at least 2 folds and {folds} samples"
        )));
    }
    train.f_values()?;
    if grid.len() == 1 {
        return Ok(CrossValidation {
            best: grid[0].clone(),
            best_index: 0,
            scores: vec![f64::NAN],
        });
    }
    let m = train.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut splits = Vec::with_capacity(folds);
    for k in 0..folds {
        let (lo, hi) = (k * m / folds, (k + 1) * m / folds);
        let held: Vec<usize> = order[lo..hi].to_vec();
        let kept: Vec<usize> = order[..lo].iter().chain(&order[hi..]).copied().collect();
        splits.push((train.subset(&kept)?, train.subset(&held)?));
    }
    let mut scores = Vec::with_capacity(grid.len());
    for h in grid {
        let mut total = 0.0;
        for (fit_set, held) in &splits {
            let score = fit(h, fit_set).and_then(|model| objective_on_set(&model, held, Objective::LeastSquares));
            match score {
                Ok(s) if s.is_finite() => total += s,
                _ => {
                    total = f64::INFINITY;
                    break;
                }
            }
        }
        scores.push(total / folds as f64);
    }
    let mut best = 0;
    for i in 1..grid.len() {
        let (a, b) = (scores[i], scores[best]);
        let tie = a == b || (a - b).abs() <= 1e-12 * a.abs().max(b.abs());
        if (!tie && a < b) || (tie && strength(&grid[i]) > strength(&grid[best])) {
            best = i;
        }
    }
    if !scores[best].is_finite() {
        return Err(Error::InvalidArgument("every grid point failed to fit".into()));
    }
    Ok(CrossValidation {
        best: grid[best].clone(),
        best_index: best,
        scores,
    })
}
