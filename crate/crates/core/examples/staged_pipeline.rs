//! Runs generate/train/eval into a run directory, then repeats the call to
//! show that completed stages with an unchanged config are skipped and that
//! outputs from a different config are only replaced under `force`.
//!
//! cargo run --release --example staged_pipeline -- [run-dir]

use std::path::PathBuf;

use smdp::experiment::{cmd_eval, ExperimentConfig, ExperimentKind, RunOptions};
use smdp::training::LossKind;

fn main() -> smdp::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("smdp-staged-pipeline"));
    let sets: Vec<String> = [
        "seed=3",
        "data.trajectories=200",
        "inference.samples=200",
        "train.phases.0.epochs=5",
        "train.phases.1.epochs=2",
    ]
    .map(String::from)
    .to_vec();
    let cfg = ExperimentConfig::preset(ExperimentKind::ToySde, LossKind::MultiStep, false).with_overrides(&sets)?;
    let opts = RunOptions { out: out.clone(), force: false, dry_run: false };
    let first = cmd_eval(&cfg, &opts)?;
    println!("first run: eval {:?}, wrote {}", first.status, first.artifacts.join(", "));
    let again = cmd_eval(&cfg, &opts)?;
    println!("same config: eval {:?}", again.status);
    let changed = cfg.with_overrides(&["train.phases.1.epochs=3".to_string()])?;
    match cmd_eval(&changed, &opts) {
        Err(e) => println!("changed training without force: {e}"),
        Ok(r) => println!("changed training without force: eval {:?}", r.status),
    }
    let forced = RunOptions { force: true, ..opts };
    let after = cmd_eval(&changed, &forced)?;
    println!("changed training with force: eval {:?}", after.status);
    println!("run directory: {}", out.display());
    Ok(())
}
