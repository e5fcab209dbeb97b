//! Plain and control-variate Monte Carlo estimators, and error metrics.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    /// Unbiased sample variance of the averaged terms (0 for a single term).
    pub residual_sample_variance: f64,
    pub n_eval: usize,
}

fn mean_and_variance(values: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let mean = values.clone().sum::<f64>() / n as f64;
    let variance = if n > 1 {
        values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    (mean, variance)
}

/// Sample mean of `f(x_i)` with no control variate.
pub fn estimate_mc(f_values: &[f64]) -> Result<Estimate> {
    if f_values.is_empty() {
        return Err(Error::Empty("f values"));
    }
    ensure_finite(f_values, "f values")?;
    let (value, residual_sample_variance) = mean_and_variance(f_values.iter().copied(), f_values.len());
    Ok(Estimate {
        value,
        residual_sample_variance,
        n_eval: f_values.len(),
    })
}

/// Mean of `f - g` over the evaluation points.
///
/// The fitted constant `offset` is not added: `g` integrates to zero, so the
/// mean of `f - g` already targets the integral of `f`. The offset is returned
/// so callers can report it next to the estimate.
pub fn estimate_with_cv(f_values: &[f64], g_values: &[f64], offset: f64) -> Result<(Estimate, f64)> {
    if f_values.len() != g_values.len() {
        return Err(Error::LengthMismatch {
            what: "f and g values",
            left: f_values.len(),
            right: g_values.len(),
        });
    }
    if f_values.is_empty() {
        return Err(Error::Empty("f values"));
    }
    ensure_finite(f_values, "f values")?;
    ensure_finite(g_values, "control variate values")?;
    let n = f_values.len();
    // Linearity: the value is assembled as mean(f) - mean(g).
    let mean_f = f_values.iter().sum::<f64>() / n as f64;
    let mean_g = g_values.iter().sum::<f64>() / n as f64;
    let diffs = f_values.iter().zip(g_values).map(|(f, g)| f - g);
    let (_, residual_sample_variance) = mean_and_variance(diffs, n);
    Ok((
        Estimate {
            value: mean_f - mean_g,
            residual_sample_variance,
            n_eval: n,
        },
        offset,
    ))
}

pub fn mean_absolute_error(estimates: &[f64], truth: f64) -> Result<f64> {
    if estimates.is_empty() {
        return Err(Error::Empty("estimates"));
    }
    Ok(estimates.iter().map(|e| (e - truth).abs()).sum::<f64>() / estimates.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn constant_input() {
        let e = estimate_mc(&[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(e.value, 1.0);
        assert_eq!(e.residual_sample_variance, 0.0);
    }

    #[test]
    fn two_point_variance() {
        let e = estimate_mc(&[0.0, 2.0]).unwrap();
        assert_eq!(e.value, 1.0);
        assert_eq!(e.residual_sample_variance, 2.0);
        assert_eq!(estimate_mc(&[5.0]).unwrap().residual_sample_variance, 0.0);
    }

    #[test]
    fn empty_is_error() {
        assert!(estimate_mc(&[]).is_err());
        assert!(mean_absolute_error(&[], 0.0).is_err());
    }

    #[test]
    fn clt_bound_on_normal_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws: Vec<f64> = (0..1_000_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        assert!(estimate_mc(&draws).unwrap().value.abs() < 4.0e-3);
    }

    #[test]
    fn cv_estimates() {
        let (e, _) = estimate_with_cv(&[1.0, 2.0], &[1.0, 2.0], 0.0).unwrap();
        assert_eq!(e.value, 0.0);
        assert_eq!(e.residual_sample_variance, 0.0);
        let (e, c) = estimate_with_cv(&[3.0, 5.0], &[1.0, 3.0], 0.25).unwrap();
        assert_eq!(e.value, 2.0);
        assert_eq!(c, 0.25);
        assert!(estimate_with_cv(&[1.0], &[1.0, 2.0], 0.0).is_err());
    }

    #[test]
    fn mae_examples() {
        assert_eq!(mean_absolute_error(&[1.0, 3.0], 2.0).unwrap(), 1.0);
        assert_eq!(mean_absolute_error(&[2.0, 2.0, 2.0], 2.0).unwrap(), 0.0);
    }

    proptest! {
        #[test]
        fn cv_is_linear(pairs in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..50)) {
            let f: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let g: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let (cv, _) = estimate_with_cv(&f, &g, 0.0).unwrap();
            let diff = estimate_mc(&f).unwrap().value - estimate_mc(&g).unwrap().value;
            prop_assert_eq!(cv.value, diff);
        }

        #[test]
        fn residual_variance_shift_invariant(
            pairs in prop::collection::vec((-10f64..10.0, -10f64..10.0), 2..40),
            shift in -100f64..100.0,
        ) {
            let f: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let g: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let fs: Vec<f64> = f.iter().map(|v| v + shift).collect();
            let gs: Vec<f64> = g.iter().map(|v| v + shift).collect();
            let a = estimate_with_cv(&f, &g, 0.0).unwrap().0.residual_sample_variance;
            let b = estimate_with_cv(&fs, &gs, 0.0).unwrap().0.residual_sample_variance;
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
        }
    }
}
