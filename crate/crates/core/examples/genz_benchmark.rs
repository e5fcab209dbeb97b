//! Every method on every Genz integrand, with MAE and mean training time.
//!
//! `cargo run --release --example genz_benchmark -- <d> <reps>`

use steincv::*;

fn main() -> std::result::Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let d: usize = args.next().map_or(Ok(1), |s| s.parse())?;
    let reps: usize = args.next().map_or(Ok(10), |s| s.parse())?;
    let methods = [
        Method::Mc,
        Method::PolyExact,
        Method::PolySgd,
        Method::KernelExact,
        Method::KernelSgd,
        Method::EnsembleExact,
        Method::EnsembleSgd,
        Method::NnSgd,
    ];
    print!("{:<15}", "integrand");
    for m in methods {
        print!(" {:>14}", m.name());
    }
    println!();
    for kind in GenzKind::ALL {
        print!("{:<15}", kind.name());
        for method in methods {
            let mut config = BenchmarkConfig::new(ProblemSpec::genz(kind, d), method, 1000, 500);
            config.repetitions = reps;
            let report = run_benchmark(&config)?;
            match report.mae {
                Some(mae) if report.failures == 0 => print!(" {mae:>14.3e}"),
                _ => print!(" {:>14}", format!("{} failed", report.failures)),
            }
        }
        println!();
    }
    Ok(())
}
