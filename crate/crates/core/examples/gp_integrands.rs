//! Integrands drawn from a Gaussian process, integrated against a random
//! two-component Gaussian mixture whose score drives the control variates.

use steincv::*;

fn main() -> std::result::Result<(), Box<dyn std::error::Error>> {
    let d = 2;
    let mixture = MixtureTarget::random(d, 2, 5)?;
    let states = mixture.sample(300, 6)?;
    let gp = sample_gp_problem(states.states(), &mixture, GpKernel::new(1.0, 1.0)?, 7, None)?;
    println!("one draw: integral {:.6}, jitter used {:.1e}", gp.true_integral, gp.jitter);

    let problem = ProblemSpec::Gp {
        d,
        components: 2,
        lambda: 1.0,
        sigma: 1.0,
        mixture: Some(mixture.spec().clone()),
        mixture_seed: None,
    };
    for method in [Method::Mc, Method::KernelSgd, Method::EnsembleSgd] {
        let mut config = BenchmarkConfig::new(problem.clone(), method, 600, 300);
        config.repetitions = 10;
        config.train = Some(TrainConfig {
            epochs: if method == Method::KernelSgd { 10 } else { 25 },
            ..method.default_train_config()
        });
        let report = run_benchmark(&config)?;
        println!("{:<13} MAE {:.3e}", method.name(), report.mae.unwrap_or(f64::NAN));
    }
    Ok(())
}
