//! Stein-operator control variates for Monte Carlo integration.

pub mod bench;
pub mod cv;
pub mod ensemble;
pub mod error;
pub mod estimator;
pub mod kernel;
pub mod nn;
pub mod poly;
pub mod problems;
pub mod samples;
pub mod targets;
pub mod training;

pub use cv::{ControlVariate, StepGeometry, Trainable};
pub use error::{Error, Result};
pub use estimator::{estimate_mc, estimate_with_cv, mean_absolute_error, Estimate};
pub use kernel::{
    base_kernel, base_kernel_derivatives, control_functional_solve, kernel_cv_eval, median_heuristic,
    stein_kernel_k0, BaseKernelParams, KernelBasis, KernelCV, KernelDerivatives, ALPHA1_GRID,
};
pub use poly::{
    basis_size, enumerate_multi_indices, poly_basis, poly_cv_eval, poly_exact_solve, MultiIndexSet, PolynomialCV,
};
pub use samples::{load_scored_samples, split_samples, ScoredSampleSet, SplitIndex, SplitPolicy};
pub use targets::{gaussian_score, mixture_score, sample_target, GaussianTarget, MixtureSpec, MixtureTarget, Target};
pub use nn::{mlp_forward_with_derivatives, nn_cv_eval, nn_param_gradient, Activation, Mlp, NnCV};
pub use training::{
    batch_objective_gradient, cross_validate, design_matrix_spectrum, objective_least_squares, objective_on_set,
    objective_variance, sgd_train, CrossValidation, Objective, ObjectiveGradient, Regularizer, Schedule, Spectrum,
    TrainConfig, TrainReport,
};
pub use ensemble::{build_multi_kernel_params, ensemble_eval, semi_exact_solve, EnsembleCV};
pub use problems::{
    genz_eval, genz_integral, genz_transformed_eval, polynomial_integral, sample_gp_problem, standard_normal_cdf,
    GenzKind, GenzProblem, GpKernel, GpProblem, PolynomialIntegrand, ProblemSpec, Realization,
};
pub use bench::{
    emit_report, fit_method, run_benchmark, run_on_samples, run_repetition, BenchmarkConfig, BenchmarkReport,
    FittedModel, Method, MethodOptions, RepetitionOutput, RepetitionResult, ReportFormat,
};
