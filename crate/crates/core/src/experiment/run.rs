//! The generate → train → eval pipeline, in memory and on disk.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::experiment::config::{ExperimentConfig, ExperimentKind};
use crate::experiment::manifest::RunManifest;
use crate::experiment::svg;
use crate::inference::{export_results, solve_batch, InferenceConfig, InferenceMode, InferenceResult};
use crate::metrics::{
    endpoints_1d, escape_fraction, field_spectral_loss, posterior_metric_q, radial_spectrum, reconstruction_mse,
    save_metrics_csv, score_field_error, MetricRow, QReport, SpectrumProfile,
};
use crate::physics::{AffineDrift1D, GrfSampler, HeatEquation2D, QuadraticDrift1D, WithoutReversePhysics, SYMMETRIC_STARTS};
use crate::rng::{self, Domain};
use crate::score::{Checkpoint, DiffusionScaled, ScoreField, ScoreModel, ZeroScore};
use crate::sde::{generate_dataset, Categorical, InitialSampler, SdeSpec, TimeGrid, TrajectorySet};
use crate::tensor::Tensor;
use crate::training::{run_training_with, History};

pub const STAGES: [&str; 3] = ["generate", "train", "eval"];
pub const CONFIG_FILE: &str = "config.json";
const TRAIN_DATA: &str = "data/train.smdp";
const TEST_DATA: &str = "data/test.smdp";
const CHECKPOINT: &str = "model.ckpt";
const LOSS_CSV: &str = "loss_curve.csv";
const METRICS_CSV: &str = "metrics.csv";
/// Offset between the training and test dataset seeds.
const TEST_SEED_OFFSET: u64 = 1_000_003;
/// Resolution of the 1D score-field heatmap.
const HEATMAP_CELLS: usize = 48;

/// The simulated system of a config.
pub fn build_spec(cfg: &ExperimentConfig) -> Result<Arc<dyn SdeSpec>> {
    let s = &cfg.system;
    Ok(match cfg.experiment {
        ExperimentKind::ToySde => Arc::new(QuadraticDrift1D { lambda1: s.toy.lambda1, lambda2: s.toy.lambda2 }),
        ExperimentKind::AffineSde => Arc::new(AffineDrift1D::new(s.affine.lambda, s.affine.g)),
        ExperimentKind::HeatEquation => {
            Arc::new(HeatEquation2D::new(s.heat.size, s.heat.profile, s.heat.alpha, s.heat.g).map_err(to_config)?)
        }
    })
}

/// The system the score is trained and inferred with: the heat system
/// without its reverse solver when `system.heat.score_only` is set.
pub fn model_spec(cfg: &ExperimentConfig) -> Result<Arc<dyn SdeSpec>> {
    let spec = build_spec(cfg)?;
    if cfg.experiment == ExperimentKind::HeatEquation && cfg.system.heat.score_only {
        return Ok(Arc::new(WithoutReversePhysics::new(spec)));
    }
    Ok(spec)
}

pub fn data_grid(cfg: &ExperimentConfig) -> Result<TimeGrid> {
    TimeGrid::new(cfg.data.t0, cfg.data.dt, cfg.data.steps).map_err(to_config)
}

fn to_config(e: Error) -> Error {
    match e {
        Error::InvalidArgument(m) => Error::Config(m),
        other => other,
    }
}

pub fn initial_sampler(cfg: &ExperimentConfig) -> Box<dyn InitialSampler> {
    match cfg.experiment {
        ExperimentKind::ToySde | ExperimentKind::AffineSde => Box::new(Categorical(vec![-1.0, 1.0])),
        ExperimentKind::HeatEquation => {
            let h = &cfg.system.heat;
            Box::new(GrfSampler { d: h.size, exponent: h.grf_exponent, spectrum: h.grf_spectrum })
        }
    }
}

/// Label used in metric rows: experiment and loss.
pub fn run_label(cfg: &ExperimentConfig) -> String {
    let mut l = format!("{}/{}", cfg.experiment.name(), cfg.train.loss.name());
    if cfg.experiment == ExperimentKind::HeatEquation && cfg.system.heat.score_only {
        l.push_str("/score-only");
    }
    l
}

pub struct Datasets {
    pub train: TrajectorySet,
    pub test: Option<TrajectorySet>,
}

/// Training trajectories (the full set; `data.fraction` applies at training)
/// and, when requested, held-out test trajectories from a separate seed.
pub fn generate_data(cfg: &ExperimentConfig) -> Result<Datasets> {
    cfg.validate()?;
    let spec = build_spec(cfg)?;
    let grid = data_grid(cfg)?;
    let p0 = initial_sampler(cfg);
    let (train, retries) = generate_dataset(&*spec, &*p0, cfg.data.trajectories, &grid, cfg.seed)?;
    if retries > 0 {
        log::warn!("{retries} trajectories diverged and were redrawn");
    }
    let test = match cfg.data.test_trajectories {
        0 => None,
        n => Some(generate_dataset(&*spec, &*p0, n, &grid, cfg.seed.wrapping_add(TEST_SEED_OFFSET))?.0),
    };
    Ok(Datasets { train, test })
}

/// Builds and trains the configured model on the leading `data.fraction` of `train`.
pub fn train_model(
    cfg: &ExperimentConfig,
    train: &TrajectorySet,
    mut on_epoch: impl FnMut(&crate::training::EpochRecord),
) -> Result<(Box<dyn ScoreModel>, History)> {
    cfg.validate()?;
    let spec = model_spec(cfg)?;
    let data = train.fraction(cfg.data.fraction)?;
    let mut plan = cfg.train.clone();
    plan.seed = cfg.seed;
    let mut model = cfg.model.build(spec.dim(), cfg.seed)?;
    let history = run_training_with(&plan, &mut *model, &*spec, &data, &mut on_epoch)?;
    Ok((model, history))
}

/// The model as the `g²`-scaled field the reverse step expects.
pub fn inference_field<'a>(cfg: &ExperimentConfig, model: &'a dyn ScoreModel) -> Result<Box<dyn ScoreField + 'a>> {
    if cfg.train.loss.learns_raw_score() {
        Ok(Box::new(DiffusionScaled::times_g2(model, model_spec(cfg)?)))
    } else {
        Ok(Box::new(model))
    }
}

pub fn inference_config(cfg: &ExperimentConfig, mode: InferenceMode) -> Result<InferenceConfig> {
    Ok(InferenceConfig {
        mode,
        c: if mode == InferenceMode::Sde { cfg.inference.c } else { None },
        g_infer: None,
        grid: data_grid(cfg)?,
        seed: cfg.seed,
    })
}

/// Inferred toy trajectories and their posterior statistics for one mode.
pub struct ModeOutcome {
    pub mode: InferenceMode,
    pub results: Vec<InferenceResult>,
    pub q: QReport,
    pub escaped: f64,
}

/// Evenly spaced end states over `inference.x_end_range`.
pub fn toy_end_states(cfg: &ExperimentConfig) -> Result<Tensor> {
    let n = cfg.inference.samples;
    let [lo, hi] = cfg.inference.x_end_range;
    Tensor::new(&[n, 1], (0..n).map(|i| lo + (hi - lo) * (i as f64 + 0.5) / n as f64).collect())
}

pub fn evaluate_toy(cfg: &ExperimentConfig, field: &dyn ScoreField) -> Result<Vec<ModeOutcome>> {
    let spec = model_spec(cfg)?;
    let x_end = toy_end_states(cfg)?;
    let [lo, hi] = cfg.eval.escape_box;
    let mut out = Vec::new();
    for &mode in &cfg.inference.modes {
        let icfg = inference_config(cfg, mode)?;
        let results = solve_batch(field, &*spec, &x_end, &icfg)?;
        let q = posterior_metric_q(&endpoints_1d(&results), cfg.eval.q_tolerance)?;
        let escaped = escape_fraction(&results, lo, hi);
        out.push(ModeOutcome { mode, results, q, escaped });
    }
    Ok(out)
}

/// Density-weighted score error of `field` and of the zero field against
/// the closed-form affine score.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoreErrorReport {
    pub model: f64,
    pub zero: f64,
    /// Number of evaluation times.
    pub n_times: usize,
}

impl ScoreErrorReport {
    pub fn relative(&self) -> f64 {
        self.model / self.zero
    }
}

/// Evaluation points: times `k·score_time_step` up to the horizon, with
/// `score_samples` exact draws from `p_t` at each.
pub fn affine_eval_points(cfg: &ExperimentConfig) -> Result<(Tensor, Vec<f64>)> {
    let spec = AffineDrift1D::new(cfg.system.affine.lambda, cfg.system.affine.g);
    let grid = data_grid(cfg)?;
    let step = cfg.eval.score_time_step;
    if !(step > 0.0) {
        return Err(Error::Config("eval.score_time_step must be positive".into()));
    }
    let n_t = ((grid.end() - grid.t0) / step + 1e-9).floor() as usize;
    let (mut xs, mut ts) = (Vec::new(), Vec::new());
    for k in 1..=n_t {
        let t = grid.t0 + k as f64 * step;
        let mut g = rng::stream(cfg.seed, Domain::Evaluation, k as u64);
        for _ in 0..cfg.eval.score_samples {
            xs.push(spec.sample_marginal(t, &SYMMETRIC_STARTS, &mut g));
            ts.push(t);
        }
    }
    Ok((Tensor::new(&[xs.len(), 1], xs)?, ts))
}

pub fn evaluate_affine(cfg: &ExperimentConfig, field: &dyn ScoreField) -> Result<ScoreErrorReport> {
    let spec = AffineDrift1D::new(cfg.system.affine.lambda, cfg.system.affine.g);
    let (x, t) = affine_eval_points(cfg)?;
    let analytic = |x: &[f64], t: f64, out: &mut [f64]| -> Result<()> {
        out[0] = spec.analytic_score(x[0], t, &SYMMETRIC_STARTS)?;
        Ok(())
    };
    let model = score_field_error(field, analytic, &spec, &x, &t)?;
    let zero = score_field_error(&ZeroScore { dim: 1 }, analytic, &spec, &x, &t)?;
    let n_times = t.len() / cfg.eval.score_samples.max(1);
    Ok(ScoreErrorReport { model, zero, n_times })
}

/// Reconstruction metrics of one heat inversion method over the test set.
#[derive(Clone, Debug)]
pub struct HeatMethod {
    pub name: String,
    /// Per test pair; divergent reconstructions are left out.
    pub mse: Vec<f64>,
    pub spectral: Vec<f64>,
    pub divergent: usize,
    pub spectrum: Option<SpectrumProfile>,
    /// Reconstruction of the first test pair.
    pub first: Vec<f64>,
}

impl HeatMethod {
    pub fn mean_mse(&self) -> f64 {
        mean(&self.mse)
    }

    pub fn mean_spectral(&self) -> f64 {
        mean(&self.spectral)
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Inverts the test end states with the model (ODE and SDE) and, when
/// `eval.baselines` is set and the reverse solver is active, with the
/// reverse solver alone.
pub fn evaluate_heat(cfg: &ExperimentConfig, field: &dyn ScoreField, test: &TrajectorySet) -> Result<Vec<HeatMethod>> {
    let physics = build_spec(cfg)?;
    let spec = model_spec(cfg)?;
    let grid = data_grid(cfg)?;
    let m = test.steps();
    let n = test.len();
    let d = spec.dim();
    let x_end = Tensor::new(&[n, d], (0..n).flat_map(|i| test.state(i, m).to_vec()).collect())?;
    let score_only = cfg.system.heat.score_only;
    let prefix = if score_only { "score-only" } else { "smdp" };
    let zero = ZeroScore { dim: d };
    let mut runs: Vec<(String, &dyn ScoreField, InferenceMode)> = cfg
        .inference
        .modes
        .iter()
        .map(|&mode| (format!("{prefix}-{}", mode_name(mode)), field, mode))
        .collect();
    if cfg.eval.baselines && !score_only {
        runs.push(("solver-only".into(), &zero, InferenceMode::Ode));
    }
    let mut out = Vec::new();
    for (name, score, mode) in runs {
        let results = solve_batch(score, &*spec, &x_end, &inference_config(cfg, mode)?)?;
        let mut method = HeatMethod { name, mse: vec![], spectral: vec![], divergent: 0, spectrum: None, first: vec![] };
        let mut spectra = Vec::new();
        for (i, r) in results.iter().enumerate() {
            let x0 = r.endpoint();
            if i == 0 {
                method.first = x0.to_vec();
            }
            if r.is_divergent() {
                method.divergent += 1;
                continue;
            }
            match reconstruction_mse(x0, test.state(i, m), &*physics, &grid) {
                Ok(v) => method.mse.push(v),
                Err(Error::Divergence { .. }) => {
                    method.divergent += 1;
                    continue;
                }
                Err(e) => return Err(e),
            }
            method.spectral.push(field_spectral_loss(x0, test.state(i, 0))?);
            spectra.push(radial_spectrum(x0)?);
        }
        if !spectra.is_empty() {
            method.spectrum = Some(SpectrumProfile::mean(&spectra)?);
        }
        out.push(method);
    }
    Ok(out)
}

pub fn mode_name(mode: InferenceMode) -> &'static str {
    match mode {
        InferenceMode::Ode => "ode",
        InferenceMode::Sde => "sde",
        InferenceMode::Separated => "separated",
    }
}

pub fn toy_metric_rows(label: &str, outcomes: &[ModeOutcome]) -> Vec<MetricRow> {
    let mut rows = Vec::new();
    for o in outcomes {
        let m = mode_name(o.mode);
        let n = o.q.n;
        rows.push(MetricRow::new(label, format!("q_{m}"), o.q.q, n, 0.0));
        rows.push(MetricRow::new(label, format!("rho_minus_{m}"), o.q.rho_minus, n, 0.0));
        rows.push(MetricRow::new(label, format!("rho_plus_{m}"), o.q.rho_plus, n, 0.0));
        rows.push(MetricRow::new(label, format!("escaped_{m}"), o.escaped, n, 0.0));
        rows.push(MetricRow::new(label, format!("divergent_{m}"), o.q.n_divergent as f64, n, 0.0));
    }
    rows
}

pub fn heat_metric_rows(label: &str, methods: &[HeatMethod]) -> Vec<MetricRow> {
    let mut rows = Vec::new();
    for m in methods {
        rows.push(MetricRow::from_values(label, format!("mse_{}", m.name), &m.mse));
        rows.push(MetricRow::from_values(label, format!("spectral_{}", m.name), &m.spectral));
        rows.push(MetricRow::new(label, format!("divergent_{}", m.name), m.divergent as f64, m.mse.len() + m.divergent, 0.0));
    }
    rows
}

/// Everything the eval stage computes, in memory.
pub struct Evaluation {
    pub rows: Vec<MetricRow>,
    pub toy: Vec<ModeOutcome>,
    pub affine: Option<ScoreErrorReport>,
    pub heat: Vec<HeatMethod>,
}

/// Runs inference and metrics for a trained model.
pub fn evaluate(cfg: &ExperimentConfig, model: &dyn ScoreModel, test: Option<&TrajectorySet>) -> Result<Evaluation> {
    let label = run_label(cfg);
    let field = inference_field(cfg, model)?;
    let mut ev = Evaluation { rows: vec![], toy: vec![], affine: None, heat: vec![] };
    match cfg.experiment {
        ExperimentKind::ToySde => {
            ev.toy = evaluate_toy(cfg, &*field)?;
            ev.rows = toy_metric_rows(&label, &ev.toy);
        }
        ExperimentKind::AffineSde => {
            let r = evaluate_affine(cfg, &*field)?;
            let n = r.n_times * cfg.eval.score_samples;
            ev.rows = vec![
                MetricRow::new(&label, "score_error", r.model, n, 0.0),
                MetricRow::new(&label, "score_error_zero_model", r.zero, n, 0.0),
                MetricRow::new(&label, "score_error_relative", r.relative(), n, 0.0),
            ];
            ev.affine = Some(r);
            if !cfg.inference.modes.is_empty() {
                ev.toy = evaluate_toy(cfg, &*field)?;
                ev.rows.extend(toy_metric_rows(&label, &ev.toy));
            }
        }
        ExperimentKind::HeatEquation => {
            let test = test.ok_or_else(|| Error::Config("heat evaluation needs test trajectories".into()))?;
            ev.heat = evaluate_heat(cfg, &*field, test)?;
            ev.rows = heat_metric_rows(&label, &ev.heat);
        }
    }
    Ok(ev)
}

/// Options shared by the stage commands.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub out: PathBuf,
    pub force: bool,
    pub dry_run: bool,
}

/// What a stage command did.
#[derive(Clone, Debug, PartialEq)]
pub enum StageStatus {
    Ran,
    Skipped,
    /// `--dry-run`: the stage would run.
    Planned,
}

pub struct StageReport {
    pub stage: &'static str,
    pub status: StageStatus,
    pub artifacts: Vec<String>,
    pub rows: Vec<MetricRow>,
}

fn stage_hash(cfg: &ExperimentConfig, stage: &str) -> String {
    match stage {
        "generate" => cfg.data_hash(),
        "train" => cfg.train_hash(),
        _ => cfg.config_hash(),
    }
}

struct StageCtx<'a> {
    cfg: &'a ExperimentConfig,
    opts: &'a RunOptions,
    manifest: RunManifest,
}

impl<'a> StageCtx<'a> {
    fn open(cfg: &'a ExperimentConfig, opts: &'a RunOptions) -> Result<Self> {
        cfg.validate()?;
        let manifest = RunManifest::open(&opts.out, &cfg.config_hash())?;
        Ok(Self { cfg, opts, manifest })
    }

    /// `Some(report)` when the stage needs no work.
    fn precheck(&self, stage: &'static str) -> Result<Option<StageReport>> {
        let hash = stage_hash(self.cfg, stage);
        let dir = &self.opts.out;
        if self.manifest.is_complete(dir, stage, &hash) {
            let artifacts = self.manifest.stages[stage].artifacts.clone();
            return Ok(Some(StageReport { stage, status: StageStatus::Skipped, artifacts, rows: vec![] }));
        }
        self.manifest.check_overwrite(dir, stage, &hash, self.opts.force)?;
        if self.opts.dry_run {
            return Ok(Some(StageReport { stage, status: StageStatus::Planned, artifacts: vec![], rows: vec![] }));
        }
        Ok(None)
    }

    fn finish(&mut self, stage: &'static str, artifacts: Vec<String>, rows: Vec<MetricRow>) -> Result<StageReport> {
        let dir = &self.opts.out;
        std::fs::write(dir.join(CONFIG_FILE), serde_json::to_string_pretty(&self.cfg.to_json())?)?;
        self.manifest.record(stage, &stage_hash(self.cfg, stage), artifacts.clone());
        self.manifest.invalidate_after(&STAGES, stage);
        self.manifest.save(dir)?;
        Ok(StageReport { stage, status: StageStatus::Ran, artifacts, rows })
    }
}

/// A container path and its JSON sidecar.
fn with_sidecar(rel: &str) -> Vec<String> {
    vec![rel.to_string(), TrajectorySet::sidecar_path(Path::new(rel)).to_string_lossy().into_owned()]
}

fn path_of(dir: &Path, rel: &str) -> PathBuf {
    dir.join(rel)
}

/// Writes the training (and test) datasets with sidecars.
pub fn cmd_generate(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<StageReport> {
    let mut ctx = StageCtx::open(cfg, opts)?;
    if let Some(r) = ctx.precheck("generate")? {
        return Ok(r);
    }
    std::fs::create_dir_all(opts.out.join("data"))?;
    let sets = generate_data(cfg)?;
    sets.train.save(&path_of(&opts.out, TRAIN_DATA))?;
    let mut artifacts = with_sidecar(TRAIN_DATA);
    if let Some(test) = &sets.test {
        test.save(&path_of(&opts.out, TEST_DATA))?;
        artifacts.extend(with_sidecar(TEST_DATA));
    }
    ctx.finish("generate", artifacts, vec![])
}

/// Trains on the generated dataset (generating it first when missing).
pub fn cmd_train(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<StageReport> {
    let upstream = cmd_generate(cfg, opts)?;
    let mut ctx = StageCtx::open(cfg, opts)?;
    if upstream.status == StageStatus::Planned {
        return Ok(StageReport { stage: "train", status: StageStatus::Planned, artifacts: vec![], rows: vec![] });
    }
    if let Some(r) = ctx.precheck("train")? {
        return Ok(r);
    }
    let train = TrajectorySet::load(&path_of(&opts.out, TRAIN_DATA))?;
    let start = Instant::now();
    let total = cfg.train.total_epochs();
    let label = run_label(cfg);
    let (model, history) = train_model(cfg, &train, |r| {
        log::info!(
            "{label} epoch {}/{total} S={} lr {:.1e} loss {:.4e} ({:.0}s)",
            r.epoch + 1,
            r.window,
            r.lr,
            r.loss,
            start.elapsed().as_secs_f64()
        );
    })?;
    Checkpoint::capture(&*model, cfg.seed, history.steps).save(&path_of(&opts.out, CHECKPOINT))?;
    history.save_csv(&path_of(&opts.out, LOSS_CSV))?;
    ctx.finish("train", vec![CHECKPOINT.to_string(), LOSS_CSV.to_string()], vec![])
}

/// Loads the trained model and writes metrics, trajectories and plots.
pub fn cmd_eval(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<StageReport> {
    let upstream = cmd_train(cfg, opts)?;
    let mut ctx = StageCtx::open(cfg, opts)?;
    if upstream.status == StageStatus::Planned {
        return Ok(StageReport { stage: "eval", status: StageStatus::Planned, artifacts: vec![], rows: vec![] });
    }
    if let Some(mut r) = ctx.precheck("eval")? {
        if r.status == StageStatus::Skipped {
            r.rows = read_metrics_rows(&path_of(&opts.out, METRICS_CSV))?;
        }
        return Ok(r);
    }
    let ck = path_of(&opts.out, CHECKPOINT);
    if !ck.exists() {
        return Err(Error::Config(format!("missing checkpoint {}", ck.display())));
    }
    let model = Checkpoint::load(&ck)?.restore()?;
    let test = match cfg.data.test_trajectories {
        0 => None,
        _ => Some(TrajectorySet::load(&path_of(&opts.out, TEST_DATA))?),
    };
    let ev = evaluate(cfg, &*model, test.as_ref())?;
    save_metrics_csv(&ev.rows, &path_of(&opts.out, METRICS_CSV))?;
    let mut artifacts = vec![METRICS_CSV.to_string()];
    artifacts.extend(write_eval_artifacts(cfg, &*model, &ev, &opts.out)?);
    ctx.finish("eval", artifacts, ev.rows)
}

fn write_eval_artifacts(cfg: &ExperimentConfig, model: &dyn ScoreModel, ev: &Evaluation, dir: &Path) -> Result<Vec<String>> {
    let mut out = Vec::new();
    let spec = model_spec(cfg)?;
    for o in &ev.toy {
        let m = mode_name(o.mode);
        let traj = format!("trajectories_{m}.smdp");
        export_results(&o.results, &*spec, &inference_config(cfg, o.mode)?, &dir.join(&traj))?;
        out.extend(with_sidecar(&traj));
        let diag = format!("diagnostics_{m}.csv");
        let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join(&diag))?);
        o.results[0].write_diagnostics(&mut f)?;
        out.push(diag);
        let chart = format!("trajectories_{m}.svg");
        let grid = data_grid(cfg)?;
        let series: Vec<(String, Vec<(f64, f64)>)> = o
            .results
            .iter()
            .step_by((o.results.len() / 20).max(1))
            .map(|r| {
                let steps = r.trajectory.rows() - 1;
                let pts = (0..=steps).map(|k| (grid.time(steps - k), r.trajectory.row(k)[0])).collect();
                (String::new(), pts)
            })
            .collect();
        let named: Vec<(&str, Vec<(f64, f64)>)> = series.iter().map(|(n, p)| (n.as_str(), p.clone())).collect();
        svg::save(&svg::line_chart(&format!("{} inferred trajectories", m.to_uppercase()), "t", "x", &named), &dir.join(&chart))?;
        out.push(chart);
    }
    if spec.dim() == 1 {
        let name = "score_field.svg".to_string();
        svg::save(&score_heatmap(cfg, model)?, &dir.join(&name))?;
        out.push(name);
    }
    if !ev.heat.is_empty() {
        let d = cfg.system.heat.size;
        let labels: Vec<&str> = ev.heat.iter().map(|m| m.name.as_str()).collect();
        let fields: Vec<&[f64]> = ev.heat.iter().map(|m| m.first.as_slice()).collect();
        let name = "reconstructions.svg".to_string();
        svg::save(&svg::field_grid("reconstructions of test pair 0", &labels, &fields, d), &dir.join(&name))?;
        out.push(name);
        let series: Vec<(&str, Vec<(f64, f64)>)> = ev
            .heat
            .iter()
            .filter_map(|m| {
                let s = m.spectrum.as_ref()?;
                Some((m.name.as_str(), s.power.iter().enumerate().skip(1).map(|(k, p)| ((k as f64).ln(), p.max(1e-300).ln())).collect()))
            })
            .collect();
        let name = "spectra.svg".to_string();
        svg::save(&svg::line_chart("radial power spectra", "ln k", "ln power", &series), &dir.join(&name))?;
        out.push(name);
    }
    Ok(out)
}

/// Score-field heatmap over time (rows, end time at the top) and state.
pub fn score_heatmap(cfg: &ExperimentConfig, model: &dyn ScoreModel) -> Result<String> {
    let grid = data_grid(cfg)?;
    let field = inference_field(cfg, model)?;
    let [lo, hi] = cfg.eval.escape_box;
    let n = HEATMAP_CELLS;
    let (mut xs, mut ts) = (Vec::with_capacity(n * n), Vec::with_capacity(n * n));
    for r in 0..n {
        let t = grid.end() - (r as f64 + 0.5) / n as f64 * (grid.end() - grid.t0);
        for c in 0..n {
            xs.push(lo + (c as f64 + 0.5) / n as f64 * (hi - lo));
            ts.push(t);
        }
    }
    let s = field.eval(&Tensor::new(&[n * n, 1], xs)?, &ts)?;
    Ok(svg::heatmap("learned score over (t, x)", n, n, s.data()))
}

/// Parses a metrics CSV written by [`save_metrics_csv`].
pub fn read_metrics_rows(path: &Path) -> Result<Vec<MetricRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for line in text.lines().skip(1).filter(|l| !l.is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(Error::Format(format!("{}: bad metrics row `{line}`", path.display())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| Error::Format(format!("bad number `{s}` in {}", path.display())));
        rows.push(MetricRow {
            experiment: f[0].to_string(),
            metric: f[1].to_string(),
            value: num(f[2])?,
            n: num(f[3])? as usize,
            std: num(f[4])?,
        });
    }
    Ok(rows)
}
