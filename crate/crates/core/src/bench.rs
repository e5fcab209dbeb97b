//! Repeated-run benchmark harness: realize a problem, split, fit a control
//! variate, estimate, and collect per-repetition results.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cv::{ControlVariate, StepGeometry, Trainable};
use crate::ensemble::{semi_exact_solve, EnsembleCV};
use crate::error::{Error, Result};
use crate::estimator::{estimate_mc, estimate_with_cv, mean_absolute_error};
use crate::kernel::{control_functional_solve, median_heuristic, BaseKernelParams, KernelBasis, KernelCV, ALPHA1_GRID};
use crate::nn::{Activation, Mlp, NnCV, DEFAULT_HIDDEN_LAYERS, DEFAULT_HIDDEN_WIDTH};
use crate::poly::{enumerate_multi_indices, poly_exact_solve, MultiIndexSet, PolynomialCV};
use crate::problems::ProblemSpec;
use crate::samples::{split_samples, ScoredSampleSet, SplitIndex, SplitPolicy};
use crate::training::{cross_validate, sgd_train, Schedule, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Mc,
    PolySgd,
    PolyExact,
    KernelSgd,
    KernelExact,
    NnSgd,
    EnsembleSgd,
    EnsembleExact,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Mc,
        Method::PolySgd,
        Method::PolyExact,
        Method::KernelSgd,
        Method::KernelExact,
        Method::NnSgd,
        Method::EnsembleSgd,
        Method::EnsembleExact,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Mc => "mc",
            Method::PolySgd => "poly_sgd",
            Method::PolyExact => "poly_exact",
            Method::KernelSgd => "kernel_sgd",
            Method::KernelExact => "kernel_exact",
            Method::NnSgd => "nn_sgd",
            Method::EnsembleSgd => "ensemble_sgd",
            Method::EnsembleExact => "ensemble_exact",
        }
    }

    pub fn is_sgd(self) -> bool {
        matches!(self, Method::PolySgd | Method::KernelSgd | Method::NnSgd | Method::EnsembleSgd)
    }

    /// Training settings used when a configuration gives none.
    pub fn default_train_config(self) -> TrainConfig {
        match self {
            Method::KernelSgd | Method::EnsembleSgd => TrainConfig {
                schedule: Schedule::Normalized {
                    scale: DEFAULT_KERNEL_STEP_SCALE,
                },
                ..TrainConfig::default()
            },
            Method::NnSgd => TrainConfig {
                schedule: Schedule::Normalized {
                    scale: DEFAULT_NN_STEP_SCALE,
                },
                ..TrainConfig::default()
            },
            _ => TrainConfig::default(),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method '{s}'")))
    }
}

pub const DEFAULT_KERNEL_STEP_SCALE: f64 = 1.0;
pub const DEFAULT_NN_STEP_SCALE: f64 = 0.05;
pub const DEFAULT_POLY_DEGREE: u32 = 2;
pub const DEFAULT_ALPHA1: f64 = 1.0;
/// Kernel length-scale as a multiple of the median heuristic.
pub const DEFAULT_LENGTH_SCALE_FACTOR: f64 = 1.0;
pub const CV_FOLDS: usize = 5;

/// Family-specific settings; unset fields take the defaults above.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MethodOptions {
    pub poly_degree: u32,
    /// Ridge `λ` for `poly_exact`.
    pub ridge: f64,
    pub alpha1: f64,
    /// Fixed length-scale; otherwise `length_scale_factor ×` median heuristic.
    pub length_scale: Option<f64>,
    pub length_scale_factor: f64,
    /// Kernel parts in `ensemble_sgd`: 1, or 2 with length-scales `(ℓ, √2 ℓ)`.
    pub ensemble_kernels: usize,
    /// Jitter for exact kernel solves; `None` is relative to the Gram diagonal.
    pub jitter: Option<f64>,
    /// Select `alpha1` (kernel families) or `ridge` (`poly_exact`) by 5-fold
    /// cross-validation, scoring grid points with exact solves.
    pub cross_validate: bool,
    pub kernel_geometry: StepGeometry,
    pub nn_hidden: Vec<usize>,
    pub nn_activation: Activation,
}

impl Default for MethodOptions {
    fn default() -> Self {
        Self {
            poly_degree: DEFAULT_POLY_DEGREE,
            ridge: 0.0,
            alpha1: DEFAULT_ALPHA1,
            length_scale: None,
            length_scale_factor: DEFAULT_LENGTH_SCALE_FACTOR,
            ensemble_kernels: 1,
            jitter: None,
            cross_validate: false,
            kernel_geometry: StepGeometry::Rkhs,
            nn_hidden: vec![DEFAULT_HIDDEN_WIDTH; DEFAULT_HIDDEN_LAYERS],
            nn_activation: Activation::Tanh,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    #[default]
    Csv,
    Json,
}

fn default_repetitions() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub problem: ProblemSpec,
    pub method: Method,
    pub n: usize,
    pub m: usize,
    #[serde(default)]
    pub split: SplitPolicy,
    /// `None` uses [`Method::default_train_config`]; the seed is replaced by
    /// the repetition seed.
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub options: MethodOptions,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub format: ReportFormat,
    /// Worker threads for repetitions; `None` uses every available core.
    #[serde(default)]
    pub threads: Option<usize>,
}

impl BenchmarkConfig {
    pub fn new(problem: ProblemSpec, method: Method, n: usize, m: usize) -> Self {
        Self {
            problem,
            method,
            n,
            m,
            split: SplitPolicy::default(),
            train: None,
            options: MethodOptions::default(),
            repetitions: default_repetitions(),
            seed: 0,
            output: None,
            format: ReportFormat::default(),
            threads: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::InvalidArgument("repetitions must be at least 1".into()));
        }
        if self.m == 0 || self.m > self.n {
            return Err(Error::InvalidArgument(format!("need 1 <= m <= n, got m = {}, n = {}", self.m, self.n)));
        }
        if !(1..=2).contains(&self.options.ensemble_kernels) {
            return Err(Error::InvalidArgument("ensemble_kernels must be 1 or 2".into()));
        }
        self.train_config(0).validate()
    }

    /// Training settings for repetition seed `seed`.
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let mut c = self.train.clone().unwrap_or_else(|| self.method.default_train_config());
        c.seed = seed;
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionResult {
    pub rep: usize,
    pub seed: u64,
    pub estimate: Option<f64>,
    pub abs_error: Option<f64>,
    pub offset: Option<f64>,
    pub residual_sample_variance: Option<f64>,
    pub train_seconds: f64,
    pub estimate_seconds: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub library_version: String,
    pub config: BenchmarkConfig,
    /// The training settings in effect (before per-repetition seeding).
    pub train_config: Option<TrainConfig>,
    pub problem: String,
    pub d: usize,
    /// Train and evaluation sets coincide; the estimate is then biased.
    pub same_set: bool,
    pub repetitions: Vec<RepetitionResult>,
    pub failures: usize,
    pub mae: Option<f64>,
    pub mean_estimate: Option<f64>,
    pub mean_train_seconds: f64,
}

/// A fitted control variate of any family.
#[derive(Debug, Clone)]
pub enum FittedModel {
    None,
    Poly(PolynomialCV),
    Kernel(KernelCV),
    Nn(NnCV),
    Ensemble(EnsembleCV),
}

impl FittedModel {
    pub fn as_cv(&self) -> Option<&dyn ControlVariate> {
        match self {
            FittedModel::None => None,
            FittedModel::Poly(m) => Some(m),
            FittedModel::Kernel(m) => Some(m),
            FittedModel::Nn(m) => Some(m),
            FittedModel::Ensemble(m) => Some(m),
        }
    }
}

/// Everything one repetition produced, for inspection and re-estimation.
#[derive(Debug, Clone)]
pub struct RepetitionOutput {
    pub result: RepetitionResult,
    pub samples: ScoredSampleSet,
    pub split: SplitIndex,
    pub model: FittedModel,
    pub true_integral: Option<f64>,
}

/// Kernel parameters from options: `alpha1` and a length-scale from the
/// median heuristic on the training states unless fixed.
pub fn kernel_params_for(train: &ScoredSampleSet, options: &MethodOptions, alpha1: f64) -> Result<BaseKernelParams> {
    let l = match options.length_scale {
        Some(l) => l,
        None => options.length_scale_factor * median_heuristic(train.states(), train.dim())?,
    };
    BaseKernelParams::new(alpha1, l)
}

fn select_alpha1(train: &ScoredSampleSet, options: &MethodOptions, seed: u64, mi: Option<&MultiIndexSet>) -> Result<f64> {
    if !options.cross_validate {
        return Ok(options.alpha1);
    }
    let length = kernel_params_for(train, options, 1.0)?.alpha2;
    let cv = cross_validate(
        train,
        &ALPHA1_GRID,
        CV_FOLDS,
        seed,
        |a1| *a1,
        |a1, set| -> Result<Box<dyn ControlVariate>> {
            let p = BaseKernelParams::new(*a1, length)?;
            Ok(match mi {
                Some(mi) => Box::new(semi_exact_solve(set, mi, p, options.jitter)?),
                None => Box::new(control_functional_solve(set, p, options.jitter)?),
            })
        },
    )?;
    Ok(cv.best)
}

impl ControlVariate for Box<dyn ControlVariate> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn eval(&self, x: &[f64], score: &[f64]) -> f64 {
        (**self).eval(x, score)
    }

    fn offset(&self) -> f64 {
        (**self).offset()
    }
}

fn train_timed<M: Trainable>(model: &mut M, train: &ScoredSampleSet, config: &TrainConfig) -> Result<f64> {
    Ok(sgd_train(model, train, config)?.wall_seconds)
}

/// Fits the configured method on `train`; returns the model and the seconds
/// spent fitting (hyperparameter selection excluded).
pub fn fit_method(
    method: Method,
    train: &ScoredSampleSet,
    options: &MethodOptions,
    train_config: &TrainConfig,
    seed: u64,
) -> Result<(FittedModel, f64)> {
    let d = train.dim();
    let degree_set = || enumerate_multi_indices(d, options.poly_degree);
    match method {
        Method::Mc => Ok((FittedModel::None, 0.0)),
        Method::PolyExact => {
            let mi = degree_set()?;
            let ridge = if options.cross_validate {
                let grid = [0.0, 1e-6, 1e-4, 1e-2, 1.0, 1e2];
                cross_validate(train, &grid, CV_FOLDS, seed, |l| *l, |l, set| poly_exact_solve(set, &mi, *l))?.best
            } else {
                options.ridge
            };
            let start = Instant::now();
            let cv = poly_exact_solve(train, &mi, ridge)?;
            Ok((FittedModel::Poly(cv), start.elapsed().as_secs_f64()))
        }
        Method::PolySgd => {
            let mut cv = PolynomialCV::zeros(degree_set()?);
            let secs = train_timed(&mut cv, train, train_config)?;
            Ok((FittedModel::Poly(cv), secs))
        }
        Method::KernelExact => {
            let a1 = select_alpha1(train, options, seed, None)?;
            let params = kernel_params_for(train, options, a1)?;
            let start = Instant::now();
            let cv = control_functional_solve(train, params, options.jitter)?;
            Ok((FittedModel::Kernel(cv), start.elapsed().as_secs_f64()))
        }
        Method::KernelSgd => {
            let a1 = select_alpha1(train, options, seed, None)?;
            let params = kernel_params_for(train, options, a1)?;
            let mut cv = KernelCV::zeros(KernelBasis::new(params, train)).with_geometry(options.kernel_geometry);
            let secs = train_timed(&mut cv, train, train_config)?;
            Ok((FittedModel::Kernel(cv), secs))
        }
        Method::NnSgd => {
            let mut widths = vec![d];
            widths.extend_from_slice(&options.nn_hidden);
            widths.push(1);
            let mut cv = NnCV::new(Mlp::new(&widths, options.nn_activation, seed)?);
            let secs = train_timed(&mut cv, train, train_config)?;
            Ok((FittedModel::Nn(cv), secs))
        }
        Method::EnsembleSgd => {
            let mi = degree_set()?;
            let a1 = select_alpha1(train, options, seed, Some(&mi))?;
            let base = kernel_params_for(train, options, a1)?;
            let mut params = vec![base];
            if options.ensemble_kernels == 2 {
                params.push(BaseKernelParams::new(a1, std::f64::consts::SQRT_2 * base.alpha2)?);
            }
            let mut cv = EnsembleCV::zeros(mi, &params, train, options.kernel_geometry)?;
            let secs = train_timed(&mut cv, train, train_config)?;
            Ok((FittedModel::Ensemble(cv), secs))
        }
        Method::EnsembleExact => {
            let mi = degree_set()?;
            let a1 = select_alpha1(train, options, seed, Some(&mi))?;
            let params = kernel_params_for(train, options, a1)?;
            let start = Instant::now();
            let cv = semi_exact_solve(train, &mi, params, options.jitter)?;
            Ok((FittedModel::Ensemble(cv), start.elapsed().as_secs_f64()))
        }
    }
}

/// Estimate of `Π[f]` from a fitted model on the evaluation rows; plain Monte
/// Carlo over all samples for [`Method::Mc`].
pub fn estimate_from_model(
    model: &FittedModel,
    samples: &ScoredSampleSet,
    split: &SplitIndex,
) -> Result<crate::estimator::Estimate> {
    let f = samples.f_values()?;
    match model.as_cv() {
        None => estimate_mc(f),
        Some(cv) => {
            let rows = &split.eval;
            if rows.is_empty() {
                return Err(Error::Empty("evaluation set"));
            }
            let f_eval: Vec<f64> = rows.iter().map(|&i| f[i]).collect();
            let g_eval = cv.eval_rows(samples, rows);
            Ok(estimate_with_cv(&f_eval, &g_eval, cv.offset())?.0)
        }
    }
}

fn split_policy_for(policy: SplitPolicy, seed: u64) -> SplitPolicy {
    match policy {
        SplitPolicy::Random { .. } => SplitPolicy::Random { seed },
        other => other,
    }
}

/// Runs repetition `rep` with seed `config.seed + rep`.
pub fn run_repetition(config: &BenchmarkConfig, rep: usize) -> Result<RepetitionOutput> {
    let seed = config.seed.wrapping_add(rep as u64);
    let realization = config.problem.realize(config.n, seed)?;
    let split = split_samples(config.n, config.m, split_policy_for(config.split, seed))?;
    let train = realization.samples.subset(&split.train)?;
    let (model, train_seconds) = fit_method(config.method, &train, &config.options, &config.train_config(seed), seed)?;
    let start = Instant::now();
    let est = estimate_from_model(&model, &realization.samples, &split)?;
    let estimate_seconds = start.elapsed().as_secs_f64();
    Ok(RepetitionOutput {
        result: RepetitionResult {
            rep,
            seed,
            estimate: Some(est.value),
            abs_error: realization.true_integral.map(|t| (est.value - t).abs()),
            offset: model.as_cv().map(|cv| cv.offset()),
            residual_sample_variance: Some(est.residual_sample_variance),
            train_seconds,
            estimate_seconds,
            error: None,
        },
        samples: realization.samples,
        split,
        model,
        true_integral: realization.true_integral,
    })
}

fn failed(rep: usize, seed: u64, err: &Error) -> RepetitionResult {
    RepetitionResult {
        rep,
        seed,
        estimate: None,
        abs_error: None,
        offset: None,
        residual_sample_variance: None,
        train_seconds: 0.0,
        estimate_seconds: 0.0,
        error: Some(err.to_string()),
    }
}

/// Runs every repetition; module errors are recorded per repetition and the
/// run continues.
pub fn run_benchmark(config: &BenchmarkConfig) -> Result<BenchmarkReport> {
    config.validate()?;
    let one = |rep: usize| match run_repetition(config, rep) {
        Ok(out) => out.result,
        Err(e) => failed(rep, config.seed.wrapping_add(rep as u64), &e),
    };
    let threads = config
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .clamp(1, config.repetitions);
    let repetitions: Vec<RepetitionResult> = if threads == 1 {
        (0..config.repetitions).map(one).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
        pool.install(|| (0..config.repetitions).into_par_iter().map(one).collect())
    };
    Ok(summarize(config, repetitions))
}

fn summarize(config: &BenchmarkConfig, repetitions: Vec<RepetitionResult>) -> BenchmarkReport {
    let failures = repetitions.iter().filter(|r| r.error.is_some()).count();
    let estimates: Vec<f64> = repetitions.iter().filter_map(|r| r.estimate).collect();
    let errors: Vec<f64> = repetitions.iter().filter_map(|r| r.abs_error).collect();
    let mae = if errors.is_empty() {
        None
    } else {
        mean_absolute_error(&errors, 0.0).ok()
    };
    let mean_estimate = if estimates.is_empty() {
        None
    } else {
        Some(estimates.iter().sum::<f64>() / estimates.len() as f64)
    };
    let ok: Vec<&RepetitionResult> = repetitions.iter().filter(|r| r.error.is_none()).collect();
    let mean_train_seconds = if ok.is_empty() {
        0.0
    } else {
        ok.iter().map(|r| r.train_seconds).sum::<f64>() / ok.len() as f64
    };
    BenchmarkReport {
        library_version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        train_config: config.method.is_sgd().then(|| config.train_config(config.seed)),
        problem: config.problem.name(),
        d: config.problem.dim(),
        same_set: config.split == SplitPolicy::SameSet,
        repetitions,
        failures,
        mae,
        mean_estimate,
        mean_train_seconds,
    }
}

pub const CSV_HEADER: &str = "method,problem,d,n,m,rep,estimate,abs_error,train_seconds";

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

/// One CSV row per repetition; failed repetitions leave the estimate empty.
pub fn write_csv<W: Write>(report: &BenchmarkReport, mut out: W) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    let c = &report.config;
    for r in &report.repetitions {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{:e}",
            c.method,
            report.problem,
            report.d,
            c.n,
            c.m,
            r.rep,
            opt(r.estimate),
            opt(r.abs_error),
            r.train_seconds
        )?;
    }
    Ok(())
}

pub fn emit_report(report: &BenchmarkReport, format: ReportFormat, path: &Path) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    match format {
        ReportFormat::Csv => write_csv(report, file),
        ReportFormat::Json => Ok(serde_json::to_writer_pretty(file, report)?),
    }
}

pub fn read_json_report(path: &Path) -> Result<BenchmarkReport> {
    Ok(serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?)
}

/// Benchmark on externally scored samples: no truth, so errors stay empty.
pub fn run_on_samples(
    samples: &ScoredSampleSet,
    method: Method,
    m: usize,
    split: SplitPolicy,
    options: &MethodOptions,
    train: Option<TrainConfig>,
    seed: u64,
) -> Result<RepetitionOutput> {
    let n = samples.len();
    let split = split_samples(n, m, split_policy_for(split, seed))?;
    let train_set = samples.subset(&split.train)?;
    let mut train_config = train.unwrap_or_else(|| method.default_train_config());
    train_config.seed = seed;
    let (model, train_seconds) = fit_method(method, &train_set, options, &train_config, seed)?;
    let start = Instant::now();
    let est = estimate_from_model(&model, samples, &split)?;
    Ok(RepetitionOutput {
        result: RepetitionResult {
            rep: 0,
            seed,
            estimate: Some(est.value),
            abs_error: None,
            offset: model.as_cv().map(|cv| cv.offset()),
            residual_sample_variance: Some(est.residual_sample_variance),
            train_seconds,
            estimate_seconds: start.elapsed().as_secs_f64(),
            error: None,
        },
        samples: samples.clone(),
        split,
        model,
        true_integral: None,
    })
}
