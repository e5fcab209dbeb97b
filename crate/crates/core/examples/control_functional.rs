//! Closed-form kernel control functional on a Genz corner peak in one
//! dimension, with the interpolation residuals on the training points.

use steincv::*;

fn main() -> std::result::Result<(), Box<dyn std::error::Error>> {
    let data = ProblemSpec::genz(GenzKind::CornerPeak, 1).realize(1000, 7)?;
    let split = split_samples(1000, 500, SplitPolicy::FirstM)?;
    let train = data.samples.subset(&split.train)?;

    let length = median_heuristic(train.states(), train.dim())?;
    let params = BaseKernelParams::new(1.0, length)?;
    let cv = control_functional_solve(&train, params, None)?;

    let f = train.f_values()?;
    let worst = (0..train.len())
        .map(|i| (f[i] - cv.offset - cv.eval(train.state(i), train.score(i))).abs())
        .fold(0.0, f64::max);
    println!("length-scale {length:.4}, offset {:.6}, max train residual {worst:.2e}", cv.offset);

    let all_f = data.samples.f_values()?;
    let f_eval: Vec<f64> = split.eval.iter().map(|&i| all_f[i]).collect();
    let g_eval = cv.eval_rows(&data.samples, &split.eval);
    let (cv_est, _) = estimate_with_cv(&f_eval, &g_eval, cv.offset)?;
    let mc_est = estimate_mc(all_f)?;
    let truth = data.true_integral.unwrap();
    println!("truth {truth:.8}");
    println!("mc    {:.8} (error {:.2e})", mc_est.value, (mc_est.value - truth).abs());
    println!("cf    {:.8} (error {:.2e})", cv_est.value, (cv_est.value - truth).abs());
    Ok(())
}
