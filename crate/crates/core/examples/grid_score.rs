//! Fits the cell-based GRID score with the 1-step and the multi-step loss and
//! counts how many ODE trajectories leave the gridded domain.

use smdp::experiment::{evaluate, generate_data, train_model, ExperimentConfig};
use smdp::inference::InferenceMode;
use smdp::training::LossKind;

fn main() -> smdp::Result<()> {
    let extra: Vec<String> = std::env::args().skip(1).collect();
    for loss in [LossKind::OneStep, LossKind::MultiStep] {
        let mut sets: Vec<String> = ["seed=1", "data.trajectories=500", "train.phases.0.epochs=10", "train.phases.1.epochs=9"]
            .map(String::from)
            .to_vec();
        sets.extend(extra.iter().cloned());
        let mut cfg = ExperimentConfig::grid_preset(loss, false).with_overrides(&sets)?;
        cfg.inference.modes = vec![InferenceMode::Ode];
        let data = generate_data(&cfg)?;
        let (model, _) = train_model(&cfg, &data.train, |_| {})?;
        let touched = model.params().as_slice().iter().filter(|v| **v != 0.0).count();
        let eval = evaluate(&cfg, &*model, None)?;
        let o = &eval.toy[0];
        println!(
            "{:10} cells updated {touched}/{}, ODE Q {:.3}, escaped {:.1}%",
            loss.name(),
            model.params().len(),
            o.q.q,
            o.escaped * 100.0
        );
    }
    Ok(())
}
