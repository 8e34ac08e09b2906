//! Multi-seed tables: every cell runs the staged pipeline in its own
//! directory, so interrupted reproductions resume from the manifests.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::experiment::config::{heat_phases, ExperimentConfig, ExperimentKind};
use crate::experiment::run::{cmd_eval, RunOptions};
use crate::experiment::svg;
use crate::inference::InferenceMode;
use crate::metrics::{mean_std, save_metrics_csv, MetricRow};
use crate::training::LossKind;

pub const TABLE1_LOSSES: [LossKind; 4] = [LossKind::MultiStep, LossKind::OneStep, LossKind::Ism, LossKind::SsmVr];
pub const TABLE1_FRACTIONS: [f64; 3] = [1.0, 0.1, 0.01];
pub const ABLATION_S_MAX: [usize; 5] = [2, 4, 8, 16, 32];
/// Upper bound on the epoch multiplier applied to reduced-data cells.
pub const MAX_EPOCH_SCALE: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Table {
    Table1,
    HeatComparison,
    Ablation,
}

impl Table {
    pub fn name(&self) -> &'static str {
        match self {
            Table::Table1 => "table1",
            Table::HeatComparison => "heat-comparison",
            Table::Ablation => "ablation",
        }
    }

    pub fn default_seeds(&self) -> usize {
        match self {
            Table::Ablation => 5,
            _ => 3,
        }
    }
}

impl fmt::Display for Table {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Table {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table1" => Ok(Table::Table1),
            "heat-comparison" => Ok(Table::HeatComparison),
            "ablation" => Ok(Table::Ablation),
            _ => Err(Error::Config(format!("unknown table `{s}` (table1, heat-comparison, ablation)"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ReproduceOptions {
    pub paper_scale: bool,
    pub base_seed: u64,
    /// Seeds per cell; the table default when `None`.
    pub seeds: Option<usize>,
    /// Overrides applied to every cell after its preset.
    pub sets: Vec<String>,
    /// Window sizes of the ablation sweep.
    pub s_max: Vec<usize>,
    pub run: RunOptions,
}

impl Default for ReproduceOptions {
    fn default() -> Self {
        Self {
            paper_scale: false,
            base_seed: 1,
            seeds: None,
            sets: vec![],
            s_max: ABLATION_S_MAX.to_vec(),
            run: RunOptions::default(),
        }
    }
}

/// One seed of one table entry.
#[derive(Clone, Debug)]
pub struct Cell {
    /// Row of the table, e.g. `multi-step/10%`.
    pub group: String,
    pub seed: u64,
    pub config: ExperimentConfig,
}

impl Cell {
    pub fn dir(&self, table: Table) -> String {
        format!("{}/{}/seed-{}", table.name(), self.group.replace(['/', '%'], "_"), self.seed)
    }
}

fn percent(f: f64) -> String {
    format!("{}%", (f * 100.0).round() as u64)
}

/// Repeats every phase `k` times longer, keeping schedules proportional.
fn scale_epochs(cfg: &mut ExperimentConfig, k: usize) {
    for p in &mut cfg.train.phases {
        p.epochs *= k;
        p.window_every *= k;
        p.lr_decay_every *= k;
    }
}

pub fn table_cells(table: Table, opts: &ReproduceOptions) -> Result<Vec<Cell>> {
    let seeds: Vec<u64> = (0..opts.seeds.unwrap_or(table.default_seeds()) as u64).map(|k| opts.base_seed + k).collect();
    let paper = opts.paper_scale;
    let mut cells = Vec::new();
    let mut push = |group: String, mut cfg: ExperimentConfig, seed: u64| -> Result<()> {
        cfg.seed = seed;
        let cfg = cfg.with_overrides(&opts.sets)?;
        cfg.validate()?;
        cells.push(Cell { group, seed, config: cfg });
        Ok(())
    };
    match table {
        Table::Table1 => {
            for loss in TABLE1_LOSSES {
                for f in TABLE1_FRACTIONS {
                    for &seed in &seeds {
                        let mut cfg = ExperimentConfig::preset(ExperimentKind::ToySde, loss, paper);
                        cfg.data.fraction = f;
                        scale_epochs(&mut cfg, ((1.0 / f).round() as usize).clamp(1, MAX_EPOCH_SCALE));
                        push(format!("{}/{}", loss.name(), percent(f)), cfg, seed)?;
                    }
                }
            }
        }
        Table::HeatComparison => {
            for &seed in &seeds {
                let cfg = ExperimentConfig::preset(ExperimentKind::HeatEquation, LossKind::MultiStep, paper);
                let mut only = cfg.clone();
                only.system.heat.score_only = true;
                push("smdp".into(), cfg, seed)?;
                push("score-only".into(), only, seed)?;
            }
        }
        Table::Ablation => {
            for &s in &opts.s_max {
                if s < 2 {
                    return Err(Error::Config(format!("S_max {s} must be at least 2")));
                }
                for &seed in &seeds {
                    let mut cfg = ExperimentConfig::preset(ExperimentKind::HeatEquation, LossKind::MultiStep, paper);
                    cfg.train.phases = heat_phases(LossKind::MultiStep, s, paper);
                    cfg.inference.modes = vec![InferenceMode::Ode];
                    cfg.eval.baselines = false;
                    push(format!("s_max={s}"), cfg, seed)?;
                }
            }
        }
    }
    Ok(cells)
}

/// A table-level threshold with its measured values.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, pass: bool, detail: String) -> Self {
        Self { name: name.into(), pass, detail }
    }
}

/// Per-group metric values across seeds.
#[derive(Clone, Debug, Default)]
pub struct Summary {
    /// `(group, metric) → values`, one per finished seed.
    pub values: BTreeMap<(String, String), Vec<f64>>,
    pub failures: Vec<(String, String)>,
}

impl Summary {
    pub fn add(&mut self, group: &str, rows: &[MetricRow]) {
        for r in rows {
            self.values.entry((group.to_string(), r.metric.clone())).or_default().push(r.value);
        }
    }

    pub fn mean(&self, group: &str, metric: &str) -> Option<f64> {
        let v = self.values.get(&(group.to_string(), metric.to_string()))?;
        (!v.is_empty()).then(|| mean_std(v).0)
    }

    pub fn rows(&self, table: Table) -> Vec<MetricRow> {
        self.values
            .iter()
            .map(|((g, m), v)| MetricRow::from_values(format!("{}/{g}", table.name()), m.clone(), v))
            .collect()
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) if x != 0.0 && x.abs() < 1e-2 => format!("{x:.3e}"),
        Some(x) => format!("{x:.4}"),
        None => "n/a".into(),
    }
}

/// Desk-scale Q thresholds and the loss ordering at full data.
pub fn table1_checks(s: &Summary) -> Vec<Check> {
    let q = |loss: LossKind, mode: &str| s.mean(&format!("{}/100%", loss.name()), &format!("q_{mode}"));
    let (ms_ode, ms_sde) = (q(LossKind::MultiStep, "ode"), q(LossKind::MultiStep, "sde"));
    let (one, ism) = (q(LossKind::OneStep, "ode"), q(LossKind::Ism, "ode"));
    let ge = |a: Option<f64>, b: Option<f64>| matches!((a, b), (Some(a), Some(b)) if a >= b);
    vec![
        Check::new(
            "multi-step Q thresholds",
            ms_ode.is_some_and(|v| v >= 0.85) && ms_sde.is_some_and(|v| v >= 0.90),
            format!("ODE {} (>= 0.85), SDE {} (>= 0.90)", fmt_opt(ms_ode), fmt_opt(ms_sde)),
        ),
        Check::new(
            "Q ordering multi-step >= 1-step >= ISM (ODE)",
            ge(ms_ode, one) && ge(one, ism),
            format!("{} >= {} >= {}", fmt_opt(ms_ode), fmt_opt(one), fmt_opt(ism)),
        ),
    ]
}

/// Reverse-solver-only versus SMDP spectra, and the ODE/SDE trade-off.
pub fn heat_checks(s: &Summary) -> Vec<Check> {
    let g = |m: &str| s.mean("smdp", m);
    let (solver, ode, sde) = (g("spectral_solver-only"), g("spectral_smdp-ode"), g("spectral_smdp-sde"));
    let (mse_ode, mse_sde) = (g("mse_smdp-ode"), g("mse_smdp-sde"));
    let ratio = match (solver, ode) {
        (Some(a), Some(b)) => a / b,
        _ => f64::NAN,
    };
    vec![
        Check::new(
            "solver-only spectral loss >= 5x SMDP-ODE",
            ratio >= 5.0,
            format!("{} / {} = {ratio:.3}", fmt_opt(solver), fmt_opt(ode)),
        ),
        Check::new(
            "SDE spectral < ODE spectral, ODE MSE <= SDE MSE",
            matches!((sde, ode, mse_ode, mse_sde), (Some(a), Some(b), Some(c), Some(d)) if a < b && c <= d),
            format!(
                "spectral SDE {} vs ODE {}; MSE ODE {} vs SDE {}",
                fmt_opt(sde),
                fmt_opt(ode),
                fmt_opt(mse_ode),
                fmt_opt(mse_sde)
            ),
        ),
    ]
}

/// MSE at `S_max = 16` at least 20% below `S_max = 2`.
pub fn ablation_checks(s: &Summary) -> Vec<Check> {
    let mse = |k: usize| s.mean(&format!("s_max={k}"), "mse_smdp-ode");
    let (a, b) = (mse(2), mse(16));
    if a.is_none() || b.is_none() {
        return vec![];
    }
    let ratio = b.unwrap() / a.unwrap();
    vec![Check::new(
        "MSE(S_max=16) <= 0.8 MSE(S_max=2)",
        ratio <= 0.8,
        format!("{} / {} = {ratio:.3}", fmt_opt(b), fmt_opt(a)),
    )]
}

pub struct Report {
    pub table: Table,
    pub summary: Summary,
    pub checks: Vec<Check>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.summary.failures.is_empty() && self.checks.iter().all(|c| c.pass)
    }
}

/// Runs every cell (in parallel across cells), then aggregates. Failed
/// cells are recorded in the report rather than aborting the table.
pub fn reproduce(table: Table, opts: &ReproduceOptions) -> Result<Report> {
    let cells = table_cells(table, opts)?;
    let root = &opts.run.out;
    let outcomes: Vec<(usize, Result<Vec<MetricRow>>)> = cells
        .par_iter()
        .enumerate()
        .map(|(i, c)| {
            let run = RunOptions { out: root.join(c.dir(table)), ..opts.run.clone() };
            log::info!("cell {} seed {}: {}", c.group, c.seed, run.out.display());
            (i, cmd_eval(&c.config, &run).map(|r| r.rows))
        })
        .collect();
    let mut summary = Summary::default();
    for (i, r) in outcomes {
        let c = &cells[i];
        match r {
            Ok(rows) => summary.add(&c.group, &rows),
            Err(e) => {
                log::error!("cell {} seed {} failed: {e}", c.group, c.seed);
                summary.failures.push((c.dir(table), e.to_string()));
            }
        }
    }
    let checks = match table {
        Table::Table1 => table1_checks(&summary),
        Table::HeatComparison => heat_checks(&summary),
        Table::Ablation => ablation_checks(&summary),
    };
    let report = Report { table, summary, checks };
    if !opts.run.dry_run {
        write_report(&report, opts, root)?;
    }
    Ok(report)
}

fn write_report(report: &Report, opts: &ReproduceOptions, root: &Path) -> Result<()> {
    let dir = root.join(report.table.name());
    std::fs::create_dir_all(&dir)?;
    let s = &report.summary;
    save_metrics_csv(&s.rows(report.table), &dir.join("summary.csv"))?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("report.csv"))?);
    match report.table {
        Table::Table1 => {
            writeln!(f, "method,data,ode_mean,ode_std,sde_mean,sde_std,seeds")?;
            for loss in TABLE1_LOSSES {
                for fr in TABLE1_FRACTIONS {
                    let g = format!("{}/{}", loss.name(), percent(fr));
                    let ode = s.values.get(&(g.clone(), "q_ode".into())).cloned().unwrap_or_default();
                    let sde = s.values.get(&(g.clone(), "q_sde".into())).cloned().unwrap_or_default();
                    let (om, os) = mean_std(&ode);
                    let (sm, ss) = mean_std(&sde);
                    writeln!(f, "{},{},{om},{os},{sm},{ss},{}", loss.name(), percent(fr), ode.len())?;
                }
            }
        }
        Table::HeatComparison => {
            writeln!(f, "method,mse_mean,mse_std,spectral_mean,spectral_std,seeds")?;
            let methods = [
                ("smdp", "smdp-ode"),
                ("smdp", "smdp-sde"),
                ("score-only", "score-only-ode"),
                ("score-only", "score-only-sde"),
                ("smdp", "solver-only"),
            ];
            for (group, m) in methods {
                let get = |k: &str| s.values.get(&(group.to_string(), format!("{k}_{m}"))).cloned().unwrap_or_default();
                let (mse, spec) = (get("mse"), get("spectral"));
                let (mm, ms) = mean_std(&mse);
                let (sm, ss) = mean_std(&spec);
                writeln!(f, "{m},{mm},{ms},{sm},{ss},{}", mse.len())?;
            }
        }
        Table::Ablation => {
            writeln!(f, "s_max,mse_mean,mse_std,seeds")?;
            let mut pts = Vec::new();
            for &k in &opts.s_max {
                let v = s.values.get(&(format!("s_max={k}"), "mse_smdp-ode".into())).cloned().unwrap_or_default();
                let (m, sd) = mean_std(&v);
                writeln!(f, "{k},{m},{sd},{}", v.len())?;
                pts.push((k as f64, m));
            }
            svg::save(&svg::line_chart("reconstruction MSE vs S_max", "S_max", "MSE", &[("SMDP-ODE", pts)]), &dir.join("ablation.svg"))?;
        }
    }
    f.flush()?;
    let mut c = std::io::BufWriter::new(std::fs::File::create(dir.join("checks.txt"))?);
    for k in &report.checks {
        writeln!(c, "{} {}: {}", if k.pass { "PASS" } else { "FAIL" }, k.name, k.detail)?;
    }
    for (cell, e) in &s.failures {
        writeln!(c, "FAILED CELL {cell}: {e}")?;
    }
    c.flush()?;
    Ok(())
}
