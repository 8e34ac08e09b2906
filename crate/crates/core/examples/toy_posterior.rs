//! Trains the MLP score on the toy SDE and reports the posterior metric Q for
//! probability-flow ODE and reverse-SDE inference.
//!
//! The default schedule takes about five minutes on one core. Any config
//! key can be overridden, for example:
//!
//! cargo run --release --example toy_posterior -- train.loss=one-step train.phases.1.epochs=20

use smdp::experiment::{evaluate, generate_data, train_model, ExperimentConfig, ExperimentKind};
use smdp::training::LossKind;

fn main() -> smdp::Result<()> {
    let mut sets = vec!["seed=1".to_string()];
    sets.extend(std::env::args().skip(1));
    let cfg = ExperimentConfig::preset(ExperimentKind::ToySde, LossKind::MultiStep, false).with_overrides(&sets)?;
    let data = generate_data(&cfg)?;
    let (model, history) = train_model(&cfg, &data.train, |r| {
        if r.epoch % 10 == 0 {
            println!("epoch {:3} S={:2} loss {:.3e}", r.epoch, r.window, r.loss);
        }
    })?;
    println!("trained {} steps", history.steps);
    let eval = evaluate(&cfg, &*model, None)?;
    for o in &eval.toy {
        println!(
            "{:?}: Q {:.3} (rho(-1) {:.3}, rho(+1) {:.3}, escaped {:.1}%)",
            o.mode,
            o.q.q,
            o.q.rho_minus,
            o.q.rho_plus,
            o.escaped * 100.0
        );
    }
    Ok(())
}
