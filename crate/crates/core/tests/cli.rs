use std::path::Path;
use std::process::{Command, Output};

const TINY: [&str; 10] = [
    "--set",
    "data.trajectories=50",
    "--set",
    "inference.samples=40",
    "--set",
    "train.phases.0.epochs=1",
    "--set",
    "train.phases.1.epochs=1",
    "--set",
    "train.phases.1.windows_per_epoch=200",
];

fn smdp(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smdp"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("RUST_LOG", "warn")
        .env("SMDP_THREADS", "1")
        .output()
        .expect("run smdp")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn eval_runs_all_stages_then_skips_them() {
    let dir = tempfile::tempdir().unwrap();
    let args: Vec<&str> = ["eval", "--seed", "4"].into_iter().chain(TINY).collect();
    let first = smdp(&args, dir.path());
    assert_eq!(first.status.code(), Some(0), "{}", String::from_utf8_lossy(&first.stderr));
    assert!(stdout(&first).contains("eval     Ran"), "{}", stdout(&first));
    for f in ["config.json", "manifest.json", "data/train.smdp", "model.ckpt", "loss_curve.csv", "metrics.csv"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let metrics = std::fs::read(dir.path().join("metrics.csv")).unwrap();
    let second = smdp(&args, dir.path());
    assert_eq!(second.status.code(), Some(0));
    assert!(stdout(&second).contains("eval     Skipped"), "{}", stdout(&second));
    assert_eq!(std::fs::read(dir.path().join("metrics.csv")).unwrap(), metrics);

    let mut changed = args.clone();
    changed.extend(["--set", "train.lr_decay_unused=1"]);
    assert_eq!(smdp(&changed, dir.path()).status.code(), Some(2));

    let mut other_seed = args.clone();
    other_seed[2] = "5";
    let refused = smdp(&other_seed, dir.path());
    assert_eq!(refused.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&refused.stderr).contains("--force"));
    other_seed.push("--force");
    assert_eq!(smdp(&other_seed, dir.path()).status.code(), Some(0));
}

#[test]
fn dry_run_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = smdp(&["eval", "--dry-run", "--experiment", "heat-equation"], &out);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("\"experiment\": \"heat-equation\""));
    assert!(stdout(&o).contains("Planned"));
    assert!(!out.join("data").exists());
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(smdp(&["generate", "--set", "data.fraction=2"], dir.path()).status.code(), Some(2));
    assert_eq!(smdp(&["generate", "--set", "bogus.key=1"], dir.path()).status.code(), Some(2));
    assert_eq!(smdp(&["generate", "--config", "/nonexistent.json"], dir.path()).status.code(), Some(2));
    let o = Command::new(env!("CARGO_BIN_EXE_smdp"))
        .args(["generate", "--dry-run", "--out"])
        .arg(dir.path())
        .env("SMDP_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn diverging_simulation_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = smdp(
        &["generate", "--experiment", "affine-sde", "--set", "system.affine.lambda=-100", "--set", "data.trajectories=1"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn config_file_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("a");
    let o = smdp(&["eval", "--dry-run", "--experiment", "affine-sde", "--seed", "9"], &out);
    let text = stdout(&o);
    let json_end = text.rfind('}').unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, &text[..=json_end]).unwrap();
    let again = smdp(&["eval", "--dry-run", "--config", cfg.to_str().unwrap()], &out);
    assert_eq!(again.status.code(), Some(0));
    assert_eq!(&stdout(&again)[..=stdout(&again).rfind('}').unwrap()], &text[..=json_end]);
}
