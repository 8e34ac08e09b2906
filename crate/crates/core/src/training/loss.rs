//! Training objectives recorded on a tape. Every loss is a per-sample sum
//! over state components, averaged over the batch.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::score::ScoreModel;
use crate::sde::{SdeSpec, DIVERGENCE_LIMIT};
use crate::tensor::Tensor;

/// `B` windows of `S` consecutive states with their times.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowBatch {
    states: Tensor,
    times: Vec<f64>,
}

impl WindowBatch {
    /// `states` is `[B, S, D]`, `times` holds `B·S` increasing-per-row times.
    pub fn new(states: Tensor, times: Vec<f64>) -> Result<Self> {
        let sh = states.shape();
        if sh.len() != 3 || sh[1] < 2 || times.len() != sh[0] * sh[1] {
            return Err(Error::invalid(format!(
                "window batch needs [B, S>=2, D] states and B*S times, got {sh:?} and {}",
                times.len()
            )));
        }
        if times.chunks(sh[1]).any(|row| row.windows(2).any(|w| !(w[1] > w[0]))) {
            return Err(Error::invalid("window times must increase"));
        }
        Ok(Self { states, times })
    }

    pub fn batch(&self) -> usize {
        self.states.shape()[0]
    }

    pub fn window(&self) -> usize {
        self.states.shape()[1]
    }

    pub fn dim(&self) -> usize {
        self.states.shape()[2]
    }

    pub fn states(&self) -> &Tensor {
        &self.states
    }

    /// States at window position `j` as `[B, D]`.
    pub fn column(&self, j: usize) -> Tensor {
        let (s, d) = (self.window(), self.dim());
        let mut out = Vec::with_capacity(self.batch() * d);
        for b in 0..self.batch() {
            let off = (b * s + j) * d;
            out.extend_from_slice(&self.states.data()[off..off + d]);
        }
        Tensor::new(&[self.batch(), d], out).expect("column shape")
    }

    pub fn times_at(&self, j: usize) -> Vec<f64> {
        let s = self.window();
        (0..self.batch()).map(|b| self.times[b * s + j]).collect()
    }

    /// Step sizes `t_{j+1} − t_j` per row.
    pub fn dts(&self, j: usize) -> Vec<f64> {
        let s = self.window();
        (0..self.batch())
            .map(|b| self.times[b * s + j + 1] - self.times[b * s + j])
            .collect()
    }
}

/// One reverse step `x + dt·[P̃⁻¹(x) + s_θ(x, t)]` on the tape.
fn reverse_step<'t>(
    model: &dyn ScoreModel,
    theta: &[Var<'t>],
    spec: &dyn SdeSpec,
    x: Var<'t>,
    t: &[f64],
    dts: &[f64],
) -> Result<Var<'t>> {
    let phys = spec.reverse_advance_tape(x, dts)?;
    let s = model.forward(theta, x, t)?;
    phys.add(s.scale_rows(dts)?)
}

fn check_finite(v: f64, what: &str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::non_finite(what.to_string()))
    }
}

/// Mean over pairs of `‖x_m − x_{m+1} − dt·[P̃⁻¹(x_{m+1}) + s_θ(x_{m+1}, t_{m+1})]‖²`.
pub fn one_step_loss<'t>(
    tape: &'t Tape,
    model: &dyn ScoreModel,
    theta: &[Var<'t>],
    spec: &dyn SdeSpec,
    batch: &WindowBatch,
) -> Result<Var<'t>> {
    if batch.window() != 2 {
        return Err(Error::invalid(format!("1-step loss takes pairs, got windows of {}", batch.window())));
    }
    let x1 = tape.constant(batch.column(1));
    let pred = reverse_step(model, theta, spec, x1, &batch.times_at(1), &batch.dts(0))?;
    let r = tape.constant(batch.column(0)).sub(pred)?;
    let loss = r.square().sum().scale(1.0 / batch.batch() as f64);
    check_finite(tape.value_ref(loss).data()[0], "1-step loss")?;
    Ok(loss)
}

/// Rolls each window back from its last state through `S − 1` reverse
/// steps and sums the squared errors against the ground-truth states,
/// averaged over windows. Gradients flow through every step.
pub fn multi_step_loss<'t>(
    tape: &'t Tape,
    model: &dyn ScoreModel,
    theta: &[Var<'t>],
    spec: &dyn SdeSpec,
    batch: &WindowBatch,
) -> Result<Var<'t>> {
    let s = batch.window();
    let mut xh = tape.constant(batch.column(s - 1));
    let mut total: Option<Var<'t>> = None;
    for j in (0..s - 1).rev() {
        xh = reverse_step(model, theta, spec, xh, &batch.times_at(j + 1), &batch.dts(j))?;
        {
            let v = tape.value_ref(xh);
            if let Some(i) = v.data().iter().position(|x| !x.is_finite() || x.abs() > DIVERGENCE_LIMIT) {
                return Err(Error::Divergence {
                    step: s - 1 - j,
                    detail: format!("rollout state in window row {} exceeded |x| = {DIVERGENCE_LIMIT:e}", i / batch.dim()),
                });
            }
        }
        let term = tape.constant(batch.column(j)).sub(xh)?.square().sum();
        total = Some(match total {
            Some(acc) => acc.add(term)?,
            None => term,
        });
    }
    let loss = total.expect("S >= 2").scale(1.0 / batch.batch() as f64);
    check_finite(tape.value_ref(loss).data()[0], "multi-step loss")?;
    Ok(loss)
}

fn check_states(model: &dyn ScoreModel, x: &Tensor, t: &[f64]) -> Result<()> {
    if x.ndim() != 2 || x.shape()[1] != model.dim() || x.rows() != t.len() || t.is_empty() {
        return Err(Error::ShapeMismatch { op: "score-matching batch", lhs: x.shape().to_vec(), rhs: vec![t.len(), model.dim()] });
    }
    Ok(())
}

/// Implicit score matching, mean of `tr J_x s_θ + ½‖s_θ‖²`. The Jacobian
/// diagonal comes from one forward tangent per coordinate.
pub fn ism_loss<'t>(
    tape: &'t Tape,
    model: &dyn ScoreModel,
    theta: &[Var<'t>],
    x: &Tensor,
    t: &[f64],
) -> Result<Var<'t>> {
    check_states(model, x, t)?;
    let (b, d) = (x.rows(), model.dim());
    let xv = tape.constant(x.clone());
    let mut s_out = None;
    let mut trace: Option<Var<'t>> = None;
    for i in 0..d {
        let mut e = Tensor::zeros(&[b, d]);
        for r in 0..b {
            e.row_mut(r)[i] = 1.0;
        }
        let (s, jv) = model.forward_jvp(theta, xv, t, &e)?;
        let diag = if d == 1 { jv.sum() } else { jv.mul(tape.constant(e))?.sum() };
        trace = Some(match trace {
            Some(acc) => acc.add(diag)?,
            None => diag,
        });
        s_out.get_or_insert(s);
    }
    let energy = s_out.expect("D >= 1").square().sum().scale(0.5);
    let loss = trace.expect("D >= 1").add(energy)?.scale(1.0 / b as f64);
    check_finite(tape.value_ref(loss).data()[0], "ISM loss")?;
    Ok(loss)
}

/// Sliced score matching with variance reduction, mean of
/// `vᵀ J_x s_θ v + ½‖s_θ‖²` averaged over the given projections.
pub fn ssm_vr_loss<'t>(
    tape: &'t Tape,
    model: &dyn ScoreModel,
    theta: &[Var<'t>],
    x: &Tensor,
    t: &[f64],
    projections: &[Tensor],
) -> Result<Var<'t>> {
    check_states(model, x, t)?;
    if projections.is_empty() {
        return Err(Error::invalid("SSM-VR needs at least one projection"));
    }
    let b = x.rows();
    let xv = tape.constant(x.clone());
    let mut s_out = None;
    let mut quad: Option<Var<'t>> = None;
    for v in projections {
        let (s, jv) = model.forward_jvp(theta, xv, t, v)?;
        let q = jv.mul(tape.constant(v.clone()))?.sum();
        quad = Some(match quad {
            Some(acc) => acc.add(q)?,
            None => q,
        });
        s_out.get_or_insert(s);
    }
    let energy = s_out.expect("projection").square().sum().scale(0.5);
    let loss = quad
        .expect("projection")
        .scale(1.0 / projections.len() as f64)
        .add(energy)?
        .scale(1.0 / b as f64);
    check_finite(tape.value_ref(loss).data()[0], "SSM-VR loss")?;
    Ok(loss)
}

/// Denoising loss for a deterministic system with the reverse step split
/// into physics, noise and denoising:
/// `x̂ = P̃⁻¹ step of x_{m+1}`, `x̂ⁿ = x̂ + sqrt(dt)·g·z`,
/// loss = mean `‖x_m − x̂ⁿ − dt·g²·s_θ(x̂ⁿ, t_m)‖²`.
pub fn denoising_loss<'t>(
    tape: &'t Tape,
    model: &dyn ScoreModel,
    theta: &[Var<'t>],
    spec: &dyn SdeSpec,
    batch: &WindowBatch,
    g_infer: f64,
    z: &Tensor,
) -> Result<Var<'t>> {
    if batch.window() != 2 {
        return Err(Error::invalid(format!("denoising loss takes pairs, got windows of {}", batch.window())));
    }
    let (b, d) = (batch.batch(), batch.dim());
    if z.shape() != [b, d] {
        return Err(Error::ShapeMismatch { op: "denoising noise", lhs: z.shape().to_vec(), rhs: vec![b, d] });
    }
    let x1 = batch.column(1);
    let dts = batch.dts(0);
    let mut noisy = Tensor::zeros(&[b, d]);
    for r in 0..b {
        let out = noisy.row_mut(r);
        spec.reverse_advance(x1.row(r), dts[r], out)?;
        let amp = dts[r].sqrt() * g_infer;
        for (o, zi) in out.iter_mut().zip(z.row(r)) {
            *o += amp * zi;
        }
    }
    let xn = tape.constant(noisy);
    let scales: Vec<f64> = dts.iter().map(|dt| dt * g_infer * g_infer).collect();
    let s = model.forward(theta, xn, &batch.times_at(0))?.scale_rows(&scales)?;
    let r = tape.constant(batch.column(0)).sub(xn)?.sub(s)?;
    let loss = r.square().sum().scale(1.0 / b as f64);
    check_finite(tape.value_ref(loss).data()[0], "denoising loss")?;
    Ok(loss)
}
