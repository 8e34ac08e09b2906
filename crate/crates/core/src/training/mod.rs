//! Training objectives, the Adam optimizer and phase-scheduled training.

mod adam;
mod loss;

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::rng::{self, Domain};
use crate::score::ScoreModel;
use crate::sde::{SdeSpec, TrajectorySet};
use crate::tensor::Tensor;

pub use adam::{clip_global_norm, Adam};
pub use loss::{denoising_loss, ism_loss, multi_step_loss, one_step_loss, ssm_vr_loss, WindowBatch};

/// Epoch losses above this abort training.
pub const LOSS_ABORT: f64 = 1e8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    OneStep,
    MultiStep,
    Ism,
    SsmVr,
    Dsm,
}

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::OneStep => "one-step",
            LossKind::MultiStep => "multi-step",
            LossKind::Ism => "ism",
            LossKind::SsmVr => "ssm-vr",
            LossKind::Dsm => "dsm",
        }
    }

    /// Whether the loss learns `∇ log p` directly rather than `g²·∇ log p`.
    pub fn learns_raw_score(&self) -> bool {
        matches!(self, LossKind::Ism | LossKind::SsmVr)
    }

    fn uses_windows(&self) -> bool {
        !self.learns_raw_score()
    }
}

/// One block of epochs sharing a learning rate, batch size and stride.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Phase {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    /// Keep every `stride`-th state of each trajectory.
    pub stride: usize,
    /// Window size `S` at the start of the phase.
    pub window: usize,
    /// When set, `S` grows by `window_step` every `window_every` epochs up to this.
    pub window_max: Option<usize>,
    pub window_step: usize,
    pub window_every: usize,
    /// Learning rate multiplier applied every `lr_decay_every` epochs.
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    /// Caps the number of windows drawn per epoch.
    pub windows_per_epoch: Option<usize>,
}

impl Default for Phase {
    fn default() -> Self {
        Self {
            epochs: 1,
            lr: 1e-3,
            batch: 256,
            stride: 1,
            window: 2,
            window_max: None,
            window_step: 1,
            window_every: 1,
            lr_decay: 1.0,
            lr_decay_every: 0,
            windows_per_epoch: None,
        }
    }
}

impl Phase {
    pub fn window_at(&self, epoch: usize) -> usize {
        match self.window_max {
            Some(max) => (self.window + self.window_step * (epoch / self.window_every.max(1))).min(max),
            None => self.window,
        }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        match epoch.checked_div(self.lr_decay_every) {
            Some(k) => self.lr * self.lr_decay.powi(k as i32),
            None => self.lr,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainPlan {
    pub loss: LossKind,
    pub phases: Vec<Phase>,
    pub seed: u64,
    /// Global gradient-norm cap; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Redraw interior times `t_n ~ U(t_n ± dt/2)` once per batch.
    pub time_jitter: bool,
    /// Projections per sample for SSM-VR.
    pub projections: usize,
    /// Noise scale `σ_t` of the denoising loss; `sqrt(dt)` when unset.
    pub noise_scale: Option<f64>,
    /// Rows per gradient shard. Shards are fixed by this size alone, so
    /// results do not depend on the worker count.
    pub shard: usize,
}

impl Default for TrainPlan {
    fn default() -> Self {
        Self {
            loss: LossKind::MultiStep,
            phases: vec![Phase::default()],
            seed: 0,
            clip_norm: Some(10.0),
            time_jitter: false,
            projections: 1,
            noise_scale: None,
            shard: 64,
        }
    }
}

impl TrainPlan {
    pub fn validate(&self) -> Result<()> {
        if self.phases.is_empty() {
            return Err(Error::Config("training plan has no phases".into()));
        }
        for (i, p) in self.phases.iter().enumerate() {
            let bad = |msg: &str| Err(Error::Config(format!("phase {i}: {msg}")));
            if p.batch == 0 || p.stride == 0 || !(p.lr > 0.0) {
                return bad("batch, stride and lr must be positive");
            }
            if p.window < 2 || p.window_max.is_some_and(|m| m < p.window) {
                return bad("window sizes must be at least 2 and window_max >= window");
            }
            if !matches!(self.loss, LossKind::MultiStep) && (p.window != 2 || p.window_max.is_some()) {
                return bad("only the multi-step loss uses windows longer than 2");
            }
        }
        if self.shard == 0 || self.projections == 0 {
            return Err(Error::Config("shard and projections must be positive".into()));
        }
        Ok(())
    }

    pub fn total_epochs(&self) -> usize {
        self.phases.iter().map(|p| p.epochs).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: usize,
    pub window: usize,
    pub lr: f64,
    pub loss: f64,
    /// Expected loss of the exact reverse process from the step noise alone.
    pub floor: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub steps: u64,
}

impl History {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss)
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "epoch,phase,S,lr,train_loss,loss_floor")?;
        for e in &self.epochs {
            let floor = e.floor.map(|f| format!("{f:e}")).unwrap_or_default();
            writeln!(w, "{},{},{},{:e},{:e},{}", e.epoch, e.phase, e.window, e.lr, e.loss, floor)?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(&mut f)?;
        f.flush()?;
        Ok(())
    }
}

/// Noise-only floor of the window loss: the state `k` steps before the
/// anchor carries `k` independent steps of variance `dt·g²` per component.
/// Drift Jacobians are ignored.
pub fn loss_floor(kind: LossKind, spec: &dyn SdeSpec, dt: f64, t0: f64, window: usize) -> Option<f64> {
    match kind {
        LossKind::OneStep | LossKind::MultiStep => {
            let g = spec.diffusion(t0);
            let k = (window * (window - 1) / 2) as f64;
            Some(k * dt * g * g * spec.dim() as f64)
        }
        _ => None,
    }
}

/// Trains `model` in place following `plan`.
pub fn run_training(
    plan: &TrainPlan,
    model: &mut dyn ScoreModel,
    spec: &dyn SdeSpec,
    data: &TrajectorySet,
) -> Result<History> {
    run_training_with(plan, model, spec, data, |_| {})
}

/// [`run_training`] with a callback after every epoch.
pub fn run_training_with(
    plan: &TrainPlan,
    model: &mut dyn ScoreModel,
    spec: &dyn SdeSpec,
    data: &TrajectorySet,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<History> {
    plan.validate()?;
    if data.dim() != spec.dim() || model.dim() != spec.dim() {
        return Err(Error::Config(format!(
            "dataset D={}, model D={} and system D={} disagree",
            data.dim(),
            model.dim(),
            spec.dim()
        )));
    }
    let mut adam = Adam::new(model.param_count());
    let mut history = History::default();
    let mut batch_counter: u64 = 0;
    let mut global_epoch = 0;
    for (pi, phase) in plan.phases.iter().enumerate() {
        let set = data.subsample(phase.stride)?;
        let grid = *set.grid();
        for e in 0..phase.epochs {
            let window = phase.window_at(e);
            if window > grid.steps + 1 {
                return Err(Error::Config(format!(
                    "window {window} longer than the {} states per trajectory at stride {}",
                    grid.steps + 1,
                    phase.stride
                )));
            }
            let lr = phase.lr_at(e);
            let mut items = enumerate_items(plan.loss, set.len(), grid.steps, window);
            items.shuffle(&mut rng::stream(plan.seed, Domain::Shuffle, global_epoch as u64));
            if let Some(cap) = phase.windows_per_epoch {
                items.truncate(cap);
            }
            let abort = |reason: String| Error::TrainingAborted { phase: pi, epoch: e, reason };
            let mut loss_sum = 0.0;
            let mut batches = 0usize;
            for chunk in items.chunks(phase.batch) {
                let times = batch_times(plan, grid.t0, grid.dt, grid.steps, batch_counter);
                let (loss, mut grad) = batch_gradient(plan, &*model, spec, &set, chunk, window, &times, batch_counter)
                    .map_err(|err| abort(err.to_string()))?;
                if let Some(c) = plan.clip_norm {
                    clip_global_norm(&mut grad, c);
                }
                adam.step(model.params_mut().as_mut_slice(), &grad, lr)
                    .map_err(|err| abort(err.to_string()))?;
                loss_sum += loss;
                batches += 1;
                batch_counter += 1;
            }
            let mean = loss_sum / batches.max(1) as f64;
            if !mean.is_finite() || mean > LOSS_ABORT {
                return Err(abort(format!("epoch loss {mean:e}")));
            }
            let rec = EpochRecord {
                epoch: global_epoch,
                phase: pi,
                window,
                lr,
                loss: mean,
                floor: loss_floor(plan.loss, spec, grid.dt, grid.t0, window),
            };
            on_epoch(&rec);
            history.epochs.push(rec);
            global_epoch += 1;
        }
    }
    history.steps = adam.step_count();
    Ok(history)
}

/// `(trajectory, start)` pairs: window starts for window losses, states
/// with `t > t0` for score-matching losses.
fn enumerate_items(kind: LossKind, n: usize, steps: usize, window: usize) -> Vec<(u32, u32)> {
    let (lo, hi) = if kind.uses_windows() { (0, steps + 1 - window) } else { (1, steps) };
    (0..n as u32)
        .flat_map(|i| (lo as u32..=hi as u32).map(move |m| (i, m)))
        .collect()
}

fn batch_times(plan: &TrainPlan, t0: f64, dt: f64, steps: usize, batch: u64) -> Vec<f64> {
    let mut t: Vec<f64> = (0..=steps).map(|m| t0 + m as f64 * dt).collect();
    if plan.time_jitter {
        let mut r = rng::stream(plan.seed, Domain::TrainNoise, (batch << 20) | 0xFFFFF);
        for tm in &mut t[1..steps] {
            *tm += r.random_range(-0.5 * dt..0.5 * dt);
        }
    }
    t
}

/// Mean loss and gradient over one batch, evaluated shard by shard.
#[allow(clippy::too_many_arguments)]
fn batch_gradient(
    plan: &TrainPlan,
    model: &dyn ScoreModel,
    spec: &dyn SdeSpec,
    set: &TrajectorySet,
    items: &[(u32, u32)],
    window: usize,
    times: &[f64],
    batch: u64,
) -> Result<(f64, Vec<f64>)> {
    let total = items.len() as f64;
    let shards: Vec<(usize, &[(u32, u32)])> = items.chunks(plan.shard).enumerate().collect();
    let results: Vec<Result<(f64, Vec<f64>)>> = shards
        .par_iter()
        .map(|&(si, shard)| {
            let weight = shard.len() as f64 / total;
            let noise = rng::stream(plan.seed, Domain::TrainNoise, (batch << 20) | si as u64);
            shard_gradient(plan, model, spec, set, shard, window, times, noise, weight)
        })
        .collect();
    let mut loss = 0.0;
    let mut grad = vec![0.0; model.param_count()];
    for r in results {
        let (l, g) = r?;
        loss += l;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    Ok((loss, grad))
}

#[allow(clippy::too_many_arguments)]
fn shard_gradient(
    plan: &TrainPlan,
    model: &dyn ScoreModel,
    spec: &dyn SdeSpec,
    set: &TrajectorySet,
    items: &[(u32, u32)],
    window: usize,
    times: &[f64],
    mut noise: rng::Rng,
    weight: f64,
) -> Result<(f64, Vec<f64>)> {
    let d = set.dim();
    let b = items.len();
    let tape = Tape::new();
    let theta = model.params().bind(&tape, true);
    let loss = if plan.loss.uses_windows() {
        let mut states = Vec::with_capacity(b * window * d);
        let mut ts = Vec::with_capacity(b * window);
        for &(n, m) in items {
            for j in 0..window {
                states.extend_from_slice(set.state(n as usize, m as usize + j));
                ts.push(times[m as usize + j]);
            }
        }
        let wb = WindowBatch::new(Tensor::new(&[b, window, d], states)?, ts)?;
        match plan.loss {
            LossKind::OneStep => one_step_loss(&tape, model, &theta, spec, &wb)?,
            LossKind::MultiStep => multi_step_loss(&tape, model, &theta, spec, &wb)?,
            _ => {
                let dt = set.grid().dt;
                let g_infer = plan.noise_scale.unwrap_or(dt.sqrt()) / dt.sqrt();
                let mut z = Tensor::zeros(&[b, d]);
                rng::fill_normal(&mut noise, z.data_mut());
                denoising_loss(&tape, model, &theta, spec, &wb, g_infer, &z)?
            }
        }
    } else {
        let mut xs = Vec::with_capacity(b * d);
        let mut ts = Vec::with_capacity(b);
        for &(n, m) in items {
            xs.extend_from_slice(set.state(n as usize, m as usize));
            ts.push(times[m as usize]);
        }
        let x = Tensor::new(&[b, d], xs)?;
        if plan.loss == LossKind::Ism {
            ism_loss(&tape, model, &theta, &x, &ts)?
        } else {
            let projections: Vec<Tensor> = (0..plan.projections)
                .map(|_| {
                    let mut v = Tensor::zeros(&[b, d]);
                    rng::fill_normal(&mut noise, v.data_mut());
                    v
                })
                .collect();
            ssm_vr_loss(&tape, model, &theta, &x, &ts, &projections)?
        }
    };
    let scaled = loss.scale(weight);
    let value = tape.value_ref(scaled).data()[0];
    let grads = tape.backward(scaled)?;
    Ok((value, model.params().gather(&grads, &theta)?))
}

#[cfg(test)]
mod tests;
