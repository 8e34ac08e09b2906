//! Learns the score of the stochastic heat equation with the convolutional
//! model and reconstructs initial fields from smoothed, noisy end states.
//! Prints reconstruction MSE and spectral loss for the reverse-physics-only
//! baseline and for SMDP ODE/SDE inference.

use smdp::experiment::{evaluate, generate_data, train_model, ExperimentConfig, ExperimentKind};
use smdp::training::LossKind;

fn main() -> smdp::Result<()> {
    let mut sets: Vec<String> = [
        "seed=1",
        "data.trajectories=64",
        "data.test_trajectories=8",
        "train.phases.0.epochs=14",
        "train.phases.1.epochs=6",
    ]
    .map(String::from)
    .to_vec();
    sets.extend(std::env::args().skip(1));
    let cfg = ExperimentConfig::preset(ExperimentKind::HeatEquation, LossKind::MultiStep, false).with_overrides(&sets)?;
    let data = generate_data(&cfg)?;
    let (model, _) = train_model(&cfg, &data.train, |r| {
        println!("epoch {:3} S={:2} loss {:.4e}", r.epoch, r.window, r.loss);
    })?;
    let eval = evaluate(&cfg, &*model, data.test.as_ref())?;
    for m in &eval.heat {
        println!("{:16} mse {:.4e} spectral {:.3} ({} divergent)", m.name, m.mean_mse(), m.mean_spectral(), m.divergent);
    }
    Ok(())
}
