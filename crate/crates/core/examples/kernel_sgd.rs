//! Kernel control variates trained by minibatch SGD against plain Monte Carlo
//! on the six Genz integrands in one dimension.

use steincv::*;

fn main() -> std::result::Result<(), Box<dyn std::error::Error>> {
    let reps: usize = std::env::args().nth(1).map_or(Ok(20), |s| s.parse())?;
    println!("{:<15} {:>10} {:>10} {:>8}", "integrand", "mc MAE", "kernel", "ratio");
    for kind in GenzKind::ALL {
        let problem = ProblemSpec::genz(kind, 1);
        let mae = |method| -> Result<f64> {
            let mut config = BenchmarkConfig::new(problem.clone(), method, 1000, 500);
            config.repetitions = reps;
            Ok(run_benchmark(&config)?.mae.unwrap_or(f64::NAN))
        };
        let (mc, kernel) = (mae(Method::Mc)?, mae(Method::KernelSgd)?);
        println!("{:<15} {mc:>10.3e} {kernel:>10.3e} {:>8.3}", kind.name(), kernel / mc);
    }
    Ok(())
}
