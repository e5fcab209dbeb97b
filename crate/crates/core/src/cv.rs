//! The control-variate interface shared by every function family.
//!
//! A control variate is `g_θ = L u_θ` for the Langevin Stein operator
//! `L u = Δu + ∇u · ∇log π`, so it is evaluated from a state and its score.

use crate::samples::ScoredSampleSet;

pub trait ControlVariate {
    fn dim(&self) -> usize;

    /// `g_θ(x)`, which integrates to zero under the target.
    fn eval(&self, x: &[f64], score: &[f64]) -> f64;

    /// The fitted constant `c` in `f ≈ c + g_θ`.
    fn offset(&self) -> f64;

    fn eval_rows(&self, set: &ScoredSampleSet, rows: &[usize]) -> Vec<f64> {
        rows.iter().map(|&i| self.eval(set.state(i), set.score(i))).collect()
    }
}

/// How an SGD step moves a block of parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepGeometry {
    /// Plain gradient in parameter coordinates.
    #[default]
    Euclidean,
    /// Kernel coefficients move along the gradient taken in the RKHS of the
    /// Stein kernel, scaled per point: a batch point `x_i` that is also center
    /// `i` updates only `θ_i`, by its upstream derivative over `k₀(x_i, x_i)`.
    /// Same objective, whitened coordinates.
    Rkhs,
}

/// A control variate with a flat parameter vector that SGD can update.
pub trait Trainable: ControlVariate {
    fn num_params(&self) -> usize;
    fn params(&self) -> Vec<f64>;
    fn set_params(&mut self, params: &[f64]);
    fn set_offset(&mut self, offset: f64);

    /// Returns `g_θ(x)` and overwrites `grad` with `∂g_θ(x)/∂θ`.
    fn eval_with_param_grad(&self, x: &[f64], score: &[f64], grad: &mut [f64]) -> f64;

    /// True when `g_θ` is linear in `θ`; the gradient is then the feature vector.
    fn is_linear(&self) -> bool;

    /// Parameter ranges that are normalized separately when a step size is
    /// derived from feature norms. Defaults to one block.
    fn blocks(&self) -> Vec<std::ops::Range<usize>> {
        vec![0..self.num_params()]
    }

    /// Writes the update direction for a unit upstream derivative at training
    /// row `row` (index into the training set the model was built on) and
    /// returns `g_θ(x)`. Equal to [`Trainable::eval_with_param_grad`] unless
    /// some block uses [`StepGeometry::Rkhs`].
    fn eval_with_direction(&self, row: usize, x: &[f64], score: &[f64], dir: &mut [f64]) -> f64 {
        let _ = row;
        self.eval_with_param_grad(x, score, dir)
    }

    /// False when some block uses [`StepGeometry::Rkhs`].
    fn is_euclidean(&self) -> bool {
        true
    }

    /// Direction of the `l2_theta` penalty `‖θ‖²` for each parameter; under
    /// the RKHS geometry this is the direction for the RKHS norm instead.
    fn l2_direction(&self, params: &[f64], out: &mut [f64]) {
        for (o, p) in out.iter_mut().zip(params) {
            *o = 2.0 * p;
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
