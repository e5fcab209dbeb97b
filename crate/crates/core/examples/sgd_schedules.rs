//! The inverse-time learning rate `β/(γ+t)` with `β` from the design-matrix
//! spectrum, against the exact least-squares objective of a linear family.

use steincv::*;

fn main() -> std::result::Result<(), Box<dyn std::error::Error>> {
    let data = ProblemSpec::genz(GenzKind::GaussianPeak, 2).realize(1000, 2)?;
    let train = data.samples.subset(&(0..500).collect::<Vec<_>>())?;
    let mi = enumerate_multi_indices(2, 2)?;

    let exact = poly_exact_solve(&train, &mi, 0.0)?;
    let target = objective_on_set(&exact, &train, Objective::LeastSquares)?;

    let mut model = PolynomialCV::zeros(mi);
    let spectrum = design_matrix_spectrum(&model, &train, true)?;
    println!(
        "sigma_min {:.3e}, sigma_max {:.3e}, beta = 1/sigma_min = {:.3e}",
        spectrum.sigma_min, spectrum.sigma_max, spectrum.suggested_beta
    );
    let config = TrainConfig {
        epochs: 100,
        schedule: Schedule::InverseTime {
            beta: Some(spectrum.suggested_beta),
            gamma: 10.0,
        },
        ..TrainConfig::default()
    };
    let report = sgd_train(&mut model, &train, &config)?;
    for (epoch, obj) in report.epoch_objective.iter().enumerate() {
        if epoch % 20 == 0 || epoch + 1 == report.epoch_objective.len() {
            println!("epoch {epoch:>3}  objective / exact {:.5}", obj / target);
        }
    }
    Ok(())
}
