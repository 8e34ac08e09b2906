use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use smdp::experiment::{
    cmd_eval, cmd_generate, cmd_train, reproduce, ExperimentConfig, ExperimentKind, ReproduceOptions, RunOptions,
    StageReport, Table,
};
use smdp::metrics::write_metrics_csv;
use smdp::training::LossKind;
use smdp::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGENCE: u8 = 3;
const EXIT_ACCEPTANCE: u8 = 4;

#[derive(Parser)]
#[command(name = "smdp", version, about = "Score matching via differentiable physics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the training and test datasets.
    Generate(Common),
    /// Train the score model (generating data first when needed).
    Train(Common),
    /// Run inference and write metrics and plots (training first when needed).
    Eval(Common),
    /// Run every cell of a table across seeds and aggregate.
    Reproduce {
        /// table1, heat-comparison or ablation.
        table: Table,
        #[command(flatten)]
        common: Common,
        /// Seeds per cell; 3 (5 for the ablation) when unset.
        #[arg(long)]
        seeds: Option<usize>,
    },
}

#[derive(Args, Clone)]
struct Common {
    /// JSON config; the toy multi-step preset when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted-path override, e.g. `train.phases.0.epochs=10`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Full-size datasets, models and schedules.
    #[arg(long)]
    paper_scale: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "runs/default")]
    out: PathBuf,
    /// Replace outputs produced from a different config.
    #[arg(long)]
    force: bool,
    /// Print the resolved config and the stages that would run.
    #[arg(long)]
    dry_run: bool,
    /// Experiment preset when no config file is given.
    #[arg(long, value_parser = parse_kind, default_value = "toy-sde")]
    experiment: ExperimentKind,
    /// Loss of the preset when no config file is given.
    #[arg(long, value_parser = parse_loss, default_value = "multi-step")]
    loss: LossKind,
}

fn parse_kind(s: &str) -> Result<ExperimentKind, String> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| format!("unknown experiment `{s}`"))
}

fn parse_loss(s: &str) -> Result<LossKind, String> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| format!("unknown loss `{s}`"))
}

impl Common {
    fn config(&self) -> smdp::Result<ExperimentConfig> {
        let base = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                let doc = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                ExperimentConfig::from_json(doc)?
            }
            None => ExperimentConfig::preset(self.experiment, self.loss, self.paper_scale),
        };
        let mut cfg = base.with_overrides(&self.sets)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn run_options(&self) -> RunOptions {
        RunOptions { out: self.out.clone(), force: self.force, dry_run: self.dry_run }
    }
}

fn configure_threads() -> smdp::Result<()> {
    if let Ok(v) = std::env::var("SMDP_THREADS") {
        let n: usize = v.parse().ok().filter(|&n| n > 0).ok_or_else(|| Error::Config(format!("SMDP_THREADS={v} is not a positive integer")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    Ok(())
}

fn print_stage(r: &StageReport) {
    println!("{:8} {:?} {}", r.stage, r.status, r.artifacts.join(" "));
}

fn run(cmd: &Command) -> smdp::Result<u8> {
    configure_threads()?;
    match cmd {
        Command::Reproduce { table, common, seeds } => {
            let opts = ReproduceOptions {
                paper_scale: common.paper_scale,
                base_seed: common.seed.unwrap_or(1),
                seeds: *seeds,
                sets: common.sets.clone(),
                run: common.run_options(),
                ..ReproduceOptions::default()
            };
            let report = reproduce(*table, &opts)?;
            for c in &report.checks {
                println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            for (cell, e) in &report.summary.failures {
                println!("FAILED CELL {cell}: {e}");
            }
            Ok(if report.passed() || opts.run.dry_run { 0 } else { EXIT_ACCEPTANCE })
        }
        Command::Generate(c) | Command::Train(c) | Command::Eval(c) => stage(cmd, c),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) | Error::InvalidArgument(_) => EXIT_CONFIG,
                Error::Divergence { .. } | Error::TrainingAborted { .. } | Error::NonFinite { .. } => EXIT_DIVERGENCE,
                _ => 1,
            })
        }
    }
}

fn stage(cmd: &Command, c: &Common) -> smdp::Result<u8> {
    let cfg = c.config()?;
    let opts = c.run_options();
    if opts.dry_run {
        println!("{}", serde_json::to_string_pretty(&cfg.to_json())?);
    }
    let reports = match cmd {
        Command::Generate(_) => vec![cmd_generate(&cfg, &opts)?],
        Command::Train(_) => vec![cmd_train(&cfg, &opts)?],
        _ => vec![cmd_eval(&cfg, &opts)?],
    };
    for r in &reports {
        print_stage(r);
        if !r.rows.is_empty() {
            write_metrics_csv(&r.rows, &mut std::io::stdout())?;
        }
    }
    Ok(0)
}
