//! Backward-in-time solution generation: probability flow ODE, reverse-time
//! SDE, the split physics/noise/denoise step, and Langevin refinement.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Domain};
use crate::score::ScoreField;
use crate::sde::{is_divergent, SdeSpec, TimeGrid, TrajectorySet};
use crate::tensor::Tensor;

/// Default Langevin step size.
pub const LANGEVIN_EPSILON: f64 = 2e-5;

/// Rows per score evaluation handed to one worker.
const EVAL_CHUNK: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InferenceMode {
    Ode,
    Sde,
    Separated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceConfig {
    pub mode: InferenceMode,
    /// Score multiplier in the SDE step; 2 for `sde`, 1 otherwise when unset.
    pub c: Option<f64>,
    /// Constant noise level replacing the system's `g(t)`.
    pub g_infer: Option<f64>,
    /// Inference runs from `grid.end()` back to `grid.t0`.
    pub grid: TimeGrid,
    pub seed: u64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            mode: InferenceMode::Ode,
            c: None,
            g_infer: None,
            grid: TimeGrid { t0: 0.0, dt: 0.02, steps: 500 },
            seed: 0,
        }
    }
}

impl InferenceConfig {
    pub fn correction(&self) -> f64 {
        self.c.unwrap_or(match self.mode {
            InferenceMode::Sde => 2.0,
            _ => 1.0,
        })
    }

    pub fn noise_level(&self, spec: &dyn SdeSpec, t: f64) -> f64 {
        self.g_infer.unwrap_or_else(|| spec.diffusion(t))
    }

    /// `(t, dt)` of reverse step `k`; the last step lands exactly on `t0`.
    pub fn step_times(&self, k: usize) -> (f64, f64) {
        let g = &self.grid;
        let t = g.end() - k as f64 * g.dt;
        let dt = if k + 1 == g.steps { t - g.t0 } else { g.dt };
        (t, dt)
    }
}

/// Per-step record of one inferred trajectory.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepDiagnostics {
    pub step: usize,
    pub x_norm: f64,
    pub s_norm: f64,
    pub divergent: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InferenceResult {
    /// `[M+1, D]`, row 0 is `x_T` and row `M` the estimate of `x_0`.
    /// Rows after a divergence repeat the last state reached.
    pub trajectory: Tensor,
    /// Reverse step at which the state left the finite region.
    pub diverged_at: Option<usize>,
    pub diagnostics: Vec<StepDiagnostics>,
}

impl InferenceResult {
    pub fn is_divergent(&self) -> bool {
        self.diverged_at.is_some()
    }

    /// Final state, the estimate of `x_0`.
    pub fn endpoint(&self) -> &[f64] {
        self.trajectory.row(self.trajectory.rows() - 1)
    }

    pub fn write_diagnostics<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "step,x_norm,s_norm,flag")?;
        for d in &self.diagnostics {
            writeln!(w, "{},{:e},{:e},{}", d.step, d.x_norm, d.s_norm, u8::from(d.divergent))?;
        }
        Ok(())
    }
}

/// Evaluates `score` on `x` in row chunks across workers.
pub fn eval_parallel(score: &dyn ScoreField, x: &Tensor, t: &[f64]) -> Result<Tensor> {
    let rows = x.rows();
    if rows <= EVAL_CHUNK {
        return score.eval(x, t);
    }
    let parts: Vec<Result<Tensor>> = (0..rows)
        .step_by(EVAL_CHUNK)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&lo| {
            let hi = (lo + EVAL_CHUNK).min(rows);
            score.eval(&x.slice_rows(lo, hi), &t[lo..hi])
        })
        .collect();
    let parts = parts.into_iter().collect::<Result<Vec<_>>>()?;
    let data: Vec<f64> = parts.into_iter().flat_map(Tensor::into_data).collect();
    Tensor::new(x.shape(), data)
}

/// One reverse step from `t` to `t − dt` for every row of `x: [B, D]`.
/// `z` holds the standard normal draws; it is ignored in ODE mode.
/// Returns the new states and the score evaluated in this step.
pub fn reverse_step(
    score: &dyn ScoreField,
    spec: &dyn SdeSpec,
    x: &Tensor,
    t: f64,
    dt: f64,
    cfg: &InferenceConfig,
    z: &Tensor,
) -> Result<(Tensor, Tensor)> {
    if !(dt > 0.0) {
        return Err(Error::invalid("reverse step needs dt > 0"));
    }
    let (b, d) = (x.rows(), spec.dim());
    if x.shape() != [b, d] || z.shape() != [b, d] {
        return Err(Error::ShapeMismatch { op: "reverse_step", lhs: x.shape().to_vec(), rhs: z.shape().to_vec() });
    }
    let mut phys = Tensor::zeros(&[b, d]);
    for r in 0..b {
        spec.reverse_advance(x.row(r), dt, phys.row_mut(r))?;
    }
    let g = cfg.noise_level(spec, t);
    let amp = dt.sqrt() * g;
    match cfg.mode {
        InferenceMode::Ode | InferenceMode::Sde => {
            let s = eval_parallel(score, x, &vec![t; b])?;
            let (c, noisy) = match cfg.mode {
                InferenceMode::Ode => (1.0, false),
                _ => (cfg.correction(), true),
            };
            let mut out = phys;
            for ((o, sv), zv) in out.data_mut().iter_mut().zip(s.data()).zip(z.data()) {
                *o += dt * c * sv;
                if noisy {
                    *o += amp * zv;
                }
            }
            Ok((out, s))
        }
        InferenceMode::Separated => {
            let mut noisy = phys;
            noisy.data_mut().iter_mut().zip(z.data()).for_each(|(o, zv)| *o += amp * zv);
            let s = eval_parallel(score, &noisy, &vec![t - dt; b])?;
            let scale = dt * g * g;
            let mut out = noisy;
            out.data_mut().iter_mut().zip(s.data()).for_each(|(o, sv)| *o += scale * sv);
            Ok((out, s))
        }
    }
}

/// Solves every row of `x_end: [B, D]` backward in time. Row `i` draws its
/// noise from stream `i` of the configured seed, so a row's result does not
/// depend on the batch it was solved in. Divergent rows are frozen.
pub fn solve_batch(
    score: &dyn ScoreField,
    spec: &dyn SdeSpec,
    x_end: &Tensor,
    cfg: &InferenceConfig,
) -> Result<Vec<InferenceResult>> {
    let (b, d) = (x_end.rows(), spec.dim());
    if x_end.ndim() != 2 || x_end.shape()[1] != d || score.dim() != d {
        return Err(Error::ShapeMismatch { op: "solve", lhs: x_end.shape().to_vec(), rhs: vec![b, d] });
    }
    if !x_end.all_finite() {
        return Err(Error::non_finite("inference end state"));
    }
    let steps = cfg.grid.steps;
    let mut rngs: Vec<rng::Rng> = (0..b).map(|i| rng::stream(cfg.seed, Domain::Inference, i as u64)).collect();
    let mut traj = vec![Vec::with_capacity((steps + 1) * d); b];
    for (r, tr) in traj.iter_mut().enumerate() {
        tr.extend_from_slice(x_end.row(r));
    }
    let mut diverged = vec![None; b];
    let mut diags = vec![Vec::with_capacity(steps); b];
    let mut x = x_end.clone();
    for k in 0..steps {
        let (t, dt) = cfg.step_times(k);
        let active: Vec<usize> = (0..b).filter(|&r| diverged[r].is_none()).collect();
        if active.is_empty() {
            for r in 0..b {
                let last = traj[r][traj[r].len() - d..].to_vec();
                traj[r].extend_from_slice(&last);
            }
            continue;
        }
        let mut xa = Tensor::zeros(&[active.len(), d]);
        let mut za = Tensor::zeros(&[active.len(), d]);
        for (i, &r) in active.iter().enumerate() {
            xa.row_mut(i).copy_from_slice(x.row(r));
            if cfg.mode != InferenceMode::Ode {
                rng::fill_normal(&mut rngs[r], za.row_mut(i));
                spec.project_noise(za.row_mut(i));
            }
        }
        let (next, s) = reverse_step(score, spec, &xa, t, dt, cfg, &za)?;
        for (i, &r) in active.iter().enumerate() {
            let row = next.row(i);
            let bad = is_divergent(row);
            diags[r].push(StepDiagnostics {
                step: k,
                x_norm: row.iter().map(|v| v * v).sum::<f64>().sqrt(),
                s_norm: s.row(i).iter().map(|v| v * v).sum::<f64>().sqrt(),
                divergent: bad,
            });
            if bad {
                diverged[r] = Some(k);
            } else {
                x.row_mut(r).copy_from_slice(row);
            }
        }
        for r in 0..b {
            let last = x.row(r).to_vec();
            traj[r].extend_from_slice(&last);
        }
    }
    traj.into_iter()
        .zip(diverged)
        .zip(diags)
        .map(|((tr, div), diagnostics)| {
            Ok(InferenceResult {
                trajectory: Tensor::new(&[steps + 1, d], tr)?,
                diverged_at: div,
                diagnostics,
            })
        })
        .collect()
}

/// Infers one trajectory from the end state `x_end`.
pub fn solve_inverse(
    score: &dyn ScoreField,
    spec: &dyn SdeSpec,
    x_end: &[f64],
    cfg: &InferenceConfig,
) -> Result<InferenceResult> {
    let x = Tensor::new(&[1, x_end.len()], x_end.to_vec())?;
    Ok(solve_batch(score, spec, &x, cfg)?.remove(0))
}

/// `n` independent posterior samples for one end state; sample `i` equals
/// [`solve_inverse`] run with noise stream `i`.
pub fn posterior_sample(
    score: &dyn ScoreField,
    spec: &dyn SdeSpec,
    x_end: &[f64],
    cfg: &InferenceConfig,
    n: usize,
) -> Result<Vec<InferenceResult>> {
    if cfg.mode == InferenceMode::Ode {
        return Err(Error::invalid("posterior sampling needs a stochastic inference mode"));
    }
    if n == 0 {
        return Err(Error::invalid("posterior sampling needs n >= 1"));
    }
    let data: Vec<f64> = (0..n).flat_map(|_| x_end.iter().copied()).collect();
    solve_batch(score, spec, &Tensor::new(&[n, x_end.len()], data)?, cfg)
}

/// Langevin iterations `x ← x + ε·∇log p(x, t) + sqrt(2ε)·z` on every row
/// of `x`, with `grad_log_p` returning `∇ log p` (not `g²·∇ log p`).
/// Row `i` uses noise stream `i`. Returns the states and a divergence flag
/// per row; divergent rows are frozen at their last finite state.
pub fn langevin_refine(
    grad_log_p: &dyn ScoreField,
    x: &Tensor,
    t: f64,
    epsilon: f64,
    n_steps: usize,
    seed: u64,
) -> Result<(Tensor, Vec<bool>)> {
    if !(epsilon > 0.0) {
        return Err(Error::invalid("Langevin step needs epsilon > 0"));
    }
    let (b, d) = (x.rows(), x.row_len());
    let mut rngs: Vec<rng::Rng> = (0..b).map(|i| rng::stream(seed, Domain::Langevin, i as u64)).collect();
    let mut state = x.clone();
    let mut bad = vec![false; b];
    let amp = (2.0 * epsilon).sqrt();
    let ts = vec![t; b];
    let mut z = vec![0.0; d];
    for _ in 0..n_steps {
        let s = eval_parallel(grad_log_p, &state, &ts)?;
        for r in 0..b {
            if bad[r] {
                continue;
            }
            rng::fill_normal(&mut rngs[r], &mut z);
            let next: Vec<f64> = state
                .row(r)
                .iter()
                .zip(s.row(r))
                .zip(&z)
                .map(|((xv, sv), zv)| xv + epsilon * sv + amp * zv)
                .collect();
            if is_divergent(&next) {
                bad[r] = true;
            } else {
                state.row_mut(r).copy_from_slice(&next);
            }
        }
    }
    Ok((state, bad))
}

/// Stores inferred trajectories, re-ordered forward in time, in the
/// dataset container. Divergent trajectories are stored as their frozen
/// states.
pub fn export_results(
    results: &[InferenceResult],
    spec: &dyn SdeSpec,
    cfg: &InferenceConfig,
    path: &Path,
) -> Result<()> {
    let first = results.first().ok_or_else(|| Error::invalid("nothing to export"))?;
    let (m1, d) = (first.trajectory.rows(), first.trajectory.row_len());
    let mut data = Vec::with_capacity(results.len() * m1 * d);
    for r in results {
        for k in (0..m1).rev() {
            data.extend_from_slice(r.trajectory.row(k));
        }
    }
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::non_finite(format!("exported trajectory value {i}")));
    }
    let set = TrajectorySet::new(cfg.grid, d, data, cfg.seed, format!("{}-inferred", spec.name()), spec.describe())?;
    set.save(path)
}

#[cfg(test)]
mod tests;
