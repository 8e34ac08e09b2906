//! Parameterized score fields `s_θ(x, t)`.
//!
//! Every trainable model keeps its parameters in one flat `f64` vector
//! ([`Params`]) and can replay its forward pass on a [`Tape`], either with
//! the parameters as leaves (training) or as constants (inference).

mod checkpoint;
mod conv;
mod grid;
mod mlp;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::sde::SdeSpec;
use crate::tensor::Tensor;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC};
pub use conv::{ConvConfig, ConvScore2D};
pub use grid::{GridConfig, GridScore};
pub use mlp::{MlpScore, MLP_HIDDEN};

/// A score evaluated on batches: `x` is `[B, D]`, `t` has one time per row.
pub trait ScoreField: Send + Sync {
    fn dim(&self) -> usize;

    fn eval(&self, x: &Tensor, t: &[f64]) -> Result<Tensor>;
}

/// A score field with trainable parameters and a differentiable forward pass.
pub trait ScoreModel: ScoreField {
    fn config(&self) -> ModelConfig;

    fn params(&self) -> &Params;

    fn params_mut(&mut self) -> &mut Params;

    /// `s_θ(x, t)` recorded on the tape of `x`; `theta` comes from [`Params::bind`].
    fn forward<'t>(&self, theta: &[Var<'t>], x: Var<'t>, t: &[f64]) -> Result<Var<'t>>;

    /// `(s_θ(x, t), J_x s_θ(x, t) · v)` for a fixed direction `v` shaped like `x`.
    fn forward_jvp<'t>(
        &self,
        theta: &[Var<'t>],
        x: Var<'t>,
        t: &[f64],
        v: &Tensor,
    ) -> Result<(Var<'t>, Var<'t>)>;

    fn param_count(&self) -> usize {
        self.params().len()
    }
}

/// Evaluates a model without recording parameter gradients.
pub(crate) fn eval_on_tape<M: ScoreModel + ?Sized>(model: &M, x: &Tensor, t: &[f64]) -> Result<Tensor> {
    check_batch(model.dim(), x, t)?;
    let tape = Tape::new();
    let theta = model.params().bind(&tape, false);
    let xv = tape.constant(x.clone());
    let s = model.forward(&theta, xv, t)?;
    Ok(tape.value(s))
}

pub(crate) fn check_batch(dim: usize, x: &Tensor, t: &[f64]) -> Result<()> {
    if x.ndim() != 2 || x.shape()[1] != dim || x.rows() != t.len() {
        return Err(Error::ShapeMismatch {
            op: "score input",
            lhs: x.shape().to_vec(),
            rhs: vec![t.len(), dim],
        });
    }
    Ok(())
}

/// Flat parameter storage split into named tensor blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    shapes: Vec<Vec<usize>>,
    data: Vec<f64>,
}

impl Params {
    pub fn zeros(shapes: Vec<Vec<usize>>) -> Self {
        let n = shapes.iter().map(|s| s.iter().product::<usize>()).sum();
        Self { shapes, data: vec![0.0; n] }
    }

    pub fn from_parts(shapes: Vec<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let p = Self::zeros(shapes);
        if p.data.len() != data.len() {
            return Err(Error::invalid(format!(
                "{} parameters given for a layout of {}",
                data.len(),
                p.data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::non_finite(format!("parameter {i}")));
        }
        Ok(Self { data, ..p })
    }

    pub fn shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Offset and length of block `i` in the flat vector.
    pub fn block(&self, i: usize) -> (usize, usize) {
        let off = self.shapes[..i].iter().map(|s| s.iter().product::<usize>()).sum();
        (off, self.shapes[i].iter().product())
    }

    pub fn block_mut(&mut self, i: usize) -> &mut [f64] {
        let (off, len) = self.block(i);
        &mut self.data[off..off + len]
    }

    /// Records one tape value per block, as leaves when `trainable`.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> Vec<Var<'t>> {
        (0..self.shapes.len())
            .map(|i| {
                let (off, len) = self.block(i);
                let t = Tensor::new(&self.shapes[i], self.data[off..off + len].to_vec())
                    .expect("block length matches its shape");
                if trainable {
                    tape.leaf(t)
                } else {
                    tape.constant(t)
                }
            })
            .collect()
    }

    /// Flattens the gradients of the leaves returned by [`Params::bind`].
    pub fn gather(&self, grads: &Gradients, theta: &[Var<'_>]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.data.len());
        for v in theta {
            out.extend_from_slice(grads.wrt(*v)?.data());
        }
        if let Some(i) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::non_finite(format!("gradient of parameter {i}")));
        }
        Ok(out)
    }
}

/// Architecture selector, serialized into configs and checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelConfig {
    Mlp,
    Grid(GridConfig),
    Conv(ConvConfig),
}

impl ModelConfig {
    pub fn name(&self) -> &'static str {
        match self {
            ModelConfig::Mlp => "mlp",
            ModelConfig::Grid(_) => "grid",
            ModelConfig::Conv(_) => "conv",
        }
    }

    /// Fresh model for states of dimension `dim`.
    pub fn build(&self, dim: usize, seed: u64) -> Result<Box<dyn ScoreModel>> {
        Ok(match self {
            ModelConfig::Mlp => Box::new(MlpScore::new(dim, seed)?),
            ModelConfig::Grid(c) => {
                if dim != 1 {
                    return Err(Error::Config(format!("grid score needs a 1D state, got D={dim}")));
                }
                Box::new(GridScore::new(c.clone())?)
            }
            ModelConfig::Conv(c) => {
                if dim != c.size * c.size {
                    return Err(Error::Config(format!(
                        "conv score on {0}x{0} fields cannot take D={dim}",
                        c.size
                    )));
                }
                Box::new(ConvScore2D::new(c.clone(), seed)?)
            }
        })
    }

    /// Model of this architecture holding the given parameters.
    pub fn with_params(&self, dim: usize, params: Vec<f64>) -> Result<Box<dyn ScoreModel>> {
        let mut m = self.build(dim, 0)?;
        let p = Params::from_parts(m.params().shapes().to_vec(), params)?;
        *m.params_mut() = p;
        Ok(m)
    }
}

/// Uniform fan-in initialization `U(−sqrt(1/fan_in), sqrt(1/fan_in))`.
pub(crate) fn fan_in_uniform(rng: &mut crate::rng::Rng, out: &mut [f64], fan_in: usize) {
    use rand::Rng as _;
    let bound = (1.0 / fan_in as f64).sqrt();
    for v in out {
        *v = rng.random_range(-bound..bound);
    }
}

/// The field that is zero everywhere.
#[derive(Clone, Copy, Debug)]
pub struct ZeroScore {
    pub dim: usize,
}

impl ScoreField for ZeroScore {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &Tensor, t: &[f64]) -> Result<Tensor> {
        check_batch(self.dim, x, t)?;
        Ok(Tensor::zeros(x.shape()))
    }
}

/// A score given by a closure acting on one state at a time.
pub struct FnScore<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64], f64, &mut [f64]) -> Result<()> + Send + Sync> FnScore<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(&[f64], f64, &mut [f64]) -> Result<()> + Send + Sync> ScoreField for FnScore<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &Tensor, t: &[f64]) -> Result<Tensor> {
        check_batch(self.dim, x, t)?;
        let mut out = Tensor::zeros(x.shape());
        for (r, &tr) in t.iter().enumerate() {
            (self.f)(x.row(r), tr, out.row_mut(r))?;
        }
        Ok(out)
    }
}

/// `g(t)^(2k) · inner(x, t)` for `k = ±1`.
///
/// The physics-coupled losses learn `s_θ ≈ g²·∇ log p`; [`DiffusionScaled::over_g2`]
/// recovers `∇ log p` from such a model, and [`DiffusionScaled::times_g2`]
/// lifts a field that estimates `∇ log p` directly into the `s_θ` convention.
pub struct DiffusionScaled<F> {
    inner: F,
    spec: Arc<dyn SdeSpec>,
    power: i32,
}

impl<F: ScoreField> DiffusionScaled<F> {
    pub fn times_g2(inner: F, spec: Arc<dyn SdeSpec>) -> Self {
        Self { inner, spec, power: 1 }
    }

    pub fn over_g2(inner: F, spec: Arc<dyn SdeSpec>) -> Self {
        Self { inner, spec, power: -1 }
    }
}

impl<F: ScoreField> ScoreField for DiffusionScaled<F> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn eval(&self, x: &Tensor, t: &[f64]) -> Result<Tensor> {
        let mut s = self.inner.eval(x, t)?;
        for (r, &tr) in t.iter().enumerate() {
            let g2 = self.spec.diffusion(tr).powi(2);
            if g2 == 0.0 {
                return Err(Error::invalid(format!("zero diffusion at t={tr} cannot scale a score")));
            }
            let f = g2.powi(self.power);
            s.row_mut(r).iter_mut().for_each(|v| *v *= f);
        }
        Ok(s)
    }
}

impl ScoreField for Box<dyn ScoreModel> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn eval(&self, x: &Tensor, t: &[f64]) -> Result<Tensor> {
        (**self).eval(x, t)
    }
}

impl<F: ScoreField + ?Sized> ScoreField for &F {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn eval(&self, x: &Tensor, t: &[f64]) -> Result<Tensor> {
        (**self).eval(x, t)
    }
}

impl<F: ScoreField + ?Sized> ScoreField for Arc<F> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn eval(&self, x: &Tensor, t: &[f64]) -> Result<Tensor> {
        (**self).eval(x, t)
    }
}
