//! Select the kernel's `alpha1` by 5-fold cross-validation over the standard
//! grid, scoring each point with the closed-form control functional.

use steincv::*;

fn main() -> std::result::Result<(), Box<dyn std::error::Error>> {
    let data = ProblemSpec::genz(GenzKind::GaussianPeak, 2).realize(400, 4)?;
    let train = data.samples.subset(&(0..200).collect::<Vec<_>>())?;
    let length = median_heuristic(train.states(), 2)?;
    let cv = cross_validate(
        &train,
        &ALPHA1_GRID,
        5,
        4,
        |a1| *a1,
        |a1, fold| control_functional_solve(fold, BaseKernelParams::new(*a1, length)?, None),
    )?;
    for (a1, score) in ALPHA1_GRID.iter().zip(&cv.scores) {
        let mark = if *a1 == cv.best { "  <- selected" } else { "" };
        println!("alpha1 {a1:>8.0e}  held-out objective {score:.4e}{mark}");
    }

    // The benchmark harness does the same when asked.
    let mut config = BenchmarkConfig::new(ProblemSpec::genz(GenzKind::GaussianPeak, 2), Method::KernelExact, 400, 200);
    config.options.cross_validate = true;
    config.repetitions = 5;
    println!("kernel_exact with cross-validated alpha1: MAE {:.3e}", run_benchmark(&config)?.mae.unwrap_or(f64::NAN));
    Ok(())
}
