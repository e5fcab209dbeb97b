//! A tanh MLP control variate trained with SGD, saved and reloaded from a
//! JSON checkpoint.

use steincv::*;

fn main() -> std::result::Result<(), Box<dyn std::error::Error>> {
    let data = ProblemSpec::genz(GenzKind::Oscillatory, 2).realize(1000, 3)?;
    let split = split_samples(1000, 500, SplitPolicy::FirstM)?;
    let train = data.samples.subset(&split.train)?;

    let mut cv = NnCV::new(Mlp::new(&[2, 20, 20, 1], Activation::Tanh, 3)?);
    let config = TrainConfig {
        epochs: 40,
        regularizer: Regularizer::MeanGSquared,
        lambda: 1e-3,
        ..Method::NnSgd.default_train_config()
    };
    let report = sgd_train(&mut cv, &train, &config)?;
    for (epoch, obj) in report.epoch_objective.iter().enumerate().step_by(10) {
        println!("epoch {epoch:>3}  objective {obj:.4e}");
    }

    let path = std::env::temp_dir().join("steincv_mlp.json");
    cv.net.save_checkpoint(&path)?;
    let restored = NnCV {
        net: Mlp::load_checkpoint(&path)?,
        offset: cv.offset,
    };

    let f = data.samples.f_values()?;
    let f_eval: Vec<f64> = split.eval.iter().map(|&i| f[i]).collect();
    let g_eval = restored.eval_rows(&data.samples, &split.eval);
    let (est, _) = estimate_with_cv(&f_eval, &g_eval, restored.offset)?;
    let truth = data.true_integral.unwrap();
    println!("estimate {:.6}, truth {truth:.6}, plain mean of eval f {:.6}", est.value, estimate_mc(&f_eval)?.value);
    Ok(())
}
