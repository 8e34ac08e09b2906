//! Trains with the 1-step loss on the affine SDE, whose score is known in
//! closed form, and compares the learned field with the analytic one.

use smdp::experiment::{evaluate, generate_data, train_model, ExperimentConfig, ExperimentKind};
use smdp::training::LossKind;

fn main() -> smdp::Result<()> {
    let mut sets = vec!["seed=1".to_string()];
    sets.extend(std::env::args().skip(1));
    let cfg = ExperimentConfig::preset(ExperimentKind::AffineSde, LossKind::OneStep, false).with_overrides(&sets)?;
    let data = generate_data(&cfg)?;
    let (model, history) = train_model(&cfg, &data.train, |_| {})?;
    println!("trained {} steps, final loss {:.3e}", history.steps, history.final_loss().unwrap_or(f64::NAN));
    let eval = evaluate(&cfg, &*model, None)?;
    let r = eval.affine.expect("affine experiment reports a score error");
    println!("mean squared error vs analytic score: {:.4e}", r.model);
    println!("same for the zero field:             {:.4e}", r.zero);
    println!("ratio:                               {:.4}", r.relative());
    Ok(())
}
