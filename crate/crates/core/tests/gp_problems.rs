use nalgebra::SymmetricEigen;
use steincv::problems::gp_joint_covariance;
use steincv::*;

#[test]
fn joint_covariance_is_positive_semidefinite() {
    for config in 0..100u64 {
        let d = 1 + (config % 3) as usize;
        let components = 1 + (config % 4) as usize;
        let mixture = MixtureTarget::random(d, components, config).unwrap();
        let lambda = 0.5 + (config % 5) as f64 * 0.5;
        let sigma = 0.3 + (config % 7) as f64 * 0.4;
        let kernel = GpKernel::new(lambda, sigma).unwrap();
        let states = mixture.sample(25, config + 1000).unwrap();
        let cov = gp_joint_covariance(states.states(), d, &mixture, &kernel).unwrap();
        let eig = SymmetricEigen::new(cov.clone()).eigenvalues;
        let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
        let scale = lambda * lambda;
        assert!(min >= -1e-8 * scale * cov.nrows() as f64, "config {config}: min eigenvalue {min:e}");
    }
}

#[test]
fn integral_draws_match_their_variance() {
    // Π[f] over many draws has variance ΠΠ[c].
    let mixture = MixtureTarget::random(1, 2, 3).unwrap();
    let kernel = GpKernel::new(1.0, 0.8).unwrap();
    let states = mixture.sample(15, 4).unwrap();
    let expected = problems::gp_kernel_double_integral(&mixture, &kernel).unwrap();
    let draws: Vec<f64> = (0..4000)
        .map(|s| sample_gp_problem(states.states(), &mixture, kernel, s, None).unwrap().true_integral)
        .collect();
    let mean = draws.iter().sum::<f64>() / draws.len() as f64;
    let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
    // Sample variance of 4000 Gaussian draws has relative sd about 2.2%.
    assert!((var / expected - 1.0).abs() < 0.1, "{var} vs {expected}");
    assert!(mean.abs() < 4.0 * (expected / draws.len() as f64).sqrt());
}

#[test]
fn gp_problem_spec_is_deterministic() {
    let spec = ProblemSpec::Gp {
        d: 2,
        components: 3,
        lambda: 1.0,
        sigma: 1.0,
        mixture: None,
        mixture_seed: Some(8),
    };
    let a = spec.realize(30, 1).unwrap();
    let b = spec.realize(30, 1).unwrap();
    assert_eq!(a.true_integral, b.true_integral);
    assert_eq!(a.samples.f_values().unwrap(), b.samples.f_values().unwrap());
    let c = spec.realize(30, 2).unwrap();
    assert_ne!(a.true_integral, c.true_integral);
}
