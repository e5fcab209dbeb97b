//! Integrate `x_1 + … + x_d` against `N(0, I)` with a first-degree polynomial
//! control variate, fitted exactly and by SGD.

use steincv::*;

fn main() -> std::result::Result<(), Box<dyn std::error::Error>> {
    let d = 10;
    let problem = ProblemSpec::sum_of_coordinates(d);

    let mc = run_benchmark(&BenchmarkConfig::new(problem.clone(), Method::Mc, 1000, 500))?;

    let mut exact = BenchmarkConfig::new(problem.clone(), Method::PolyExact, 1000, 500);
    exact.options.poly_degree = 1;
    let exact = run_benchmark(&exact)?;

    let mut sgd = BenchmarkConfig::new(problem, Method::PolySgd, 1000, 500);
    sgd.options.poly_degree = 1;
    sgd.train = Some(TrainConfig {
        epochs: 50,
        ..TrainConfig::default()
    });
    let sgd = run_benchmark(&sgd)?;

    for r in [&mc, &exact, &sgd] {
        println!(
            "{:<11} MAE {:.3e}  mean train {:.2e}s",
            r.config.method.name(),
            r.mae.unwrap_or(f64::NAN),
            r.mean_train_seconds
        );
    }
    Ok(())
}
