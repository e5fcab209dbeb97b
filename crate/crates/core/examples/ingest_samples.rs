//! Post-process externally generated samples: write a CSV of states, scores
//! and integrand values, read it back and estimate without a known truth.

use steincv::bench::run_on_samples;
use steincv::*;

fn main() -> std::result::Result<(), Box<dyn std::error::Error>> {
    let target = GaussianTarget::isotropic(vec![1.0, -0.5], 0.8)?;
    let samples = target.sample(800, 11)?.with_f(|x| (x[0] * x[1]).sin() + x[0] * x[0])?;
    let path = std::env::temp_dir().join("steincv_samples.csv");
    samples.write_csv(&path)?;

    let loaded = load_scored_samples(&path, true)?;
    println!("loaded {} samples in d = {} from {}", loaded.len(), loaded.dim(), path.display());
    for method in [Method::Mc, Method::PolyExact, Method::KernelSgd, Method::EnsembleExact] {
        let out = run_on_samples(&loaded, method, 400, SplitPolicy::FirstM, &MethodOptions::default(), None, 0)?;
        let r = out.result;
        println!(
            "{:<15} estimate {:.6}  residual variance {:.3e}",
            method.name(),
            r.estimate.unwrap_or(f64::NAN),
            r.residual_sample_variance.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
