//! Semi-exact control functional: a polynomial plus a kernel part, exact on
//! integrands in the polynomial span and interpolating elsewhere.

use steincv::*;

fn main() -> std::result::Result<(), Box<dyn std::error::Error>> {
    let mi = enumerate_multi_indices(4, 1)?;
    for (name, problem) in [
        ("sum of coordinates, d=4", ProblemSpec::sum_of_coordinates(4)),
        ("oscillatory, d=4", ProblemSpec::genz(GenzKind::Oscillatory, 4)),
    ] {
        let data = problem.realize(600, 1)?;
        let split = split_samples(600, 300, SplitPolicy::FirstM)?;
        let train = data.samples.subset(&split.train)?;
        let params = BaseKernelParams::new(1.0, median_heuristic(train.states(), 4)?)?;
        let cv = semi_exact_solve(&train, &mi, params, None)?;

        let f = data.samples.f_values()?;
        let f_eval: Vec<f64> = split.eval.iter().map(|&i| f[i]).collect();
        let g_eval = cv.eval_rows(&data.samples, &split.eval);
        let (est, _) = estimate_with_cv(&f_eval, &g_eval, cv.offset)?;
        let truth = data.true_integral.unwrap();
        println!("{name}: estimate {:.10}, truth {truth:.10}, error {:.2e}", est.value, (est.value - truth).abs());
    }

    // States on the diagonal x_1 = x_2 make the two linear basis columns equal;
    // the dependent column is reported instead of solved around.
    let t = GaussianTarget::standard(1)?;
    let line = t.sample(20, 2)?;
    let states: Vec<f64> = line.states().iter().flat_map(|v| [*v, *v]).collect();
    let scores: Vec<f64> = states.iter().map(|v| -v).collect();
    let f: Vec<f64> = line.states().iter().map(|v| v.cos()).collect();
    let train = ScoredSampleSet::new(2, states, scores, Some(f))?;
    let mi = enumerate_multi_indices(2, 1)?;
    if let Err(e) = semi_exact_solve(&train, &mi, BaseKernelParams::new(1.0, 1.0)?, None) {
        println!("rank check: {e}");
    }
    Ok(())
}
