use super::{check_batch, eval_on_tape, fan_in_uniform, ModelConfig, Params, ScoreField, ScoreModel};
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::rng::{self, Domain};
use crate::tensor::Tensor;

/// Hidden widths between the `(x, t)` input and the `D` outputs.
pub const MLP_HIDDEN: [usize; 5] = [30, 30, 25, 20, 10];

/// Fully connected `(x, t) ↦ s` with elu hidden layers and a linear output.
///
/// Parameters are stored as `W_0, b_0, W_1, b_1, …` with `W_l: [in, out]`.
#[derive(Clone, Debug)]
pub struct MlpScore {
    dim: usize,
    params: Params,
}

impl MlpScore {
    pub fn widths(dim: usize) -> Vec<usize> {
        let mut w = vec![dim + 1];
        w.extend(MLP_HIDDEN);
        w.push(dim);
        w
    }

    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("MLP score needs D >= 1"));
        }
        let widths = Self::widths(dim);
        let shapes = widths
            .windows(2)
            .flat_map(|w| [vec![w[0], w[1]], vec![w[1]]])
            .collect();
        let mut params = Params::zeros(shapes);
        let mut rng = rng::stream(seed, Domain::Init, 0);
        for (l, w) in widths.windows(2).enumerate() {
            fan_in_uniform(&mut rng, params.block_mut(2 * l), w[0]);
        }
        Ok(Self { dim, params })
    }

    fn layers(&self) -> usize {
        MLP_HIDDEN.len() + 1
    }

    fn input<'t>(&self, x: Var<'t>, t: &[f64]) -> Result<Var<'t>> {
        let tape = x.tape();
        let tcol = tape.constant(Tensor::new(&[t.len(), 1], t.to_vec())?);
        x.concat_cols(tcol)
    }
}

impl ScoreField for MlpScore {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &Tensor, t: &[f64]) -> Result<Tensor> {
        eval_on_tape(self, x, t)
    }
}

impl ScoreModel for MlpScore {
    fn config(&self) -> ModelConfig {
        ModelConfig::Mlp
    }

    fn params(&self) -> &Params {
        &self.params
    }

    fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    fn forward<'t>(&self, theta: &[Var<'t>], x: Var<'t>, t: &[f64]) -> Result<Var<'t>> {
        check_batch(self.dim, &x.tape().value_ref(x), t)?;
        let mut h = self.input(x, t)?;
        for l in 0..self.layers() {
            h = h.matmul(theta[2 * l])?.add_bias(theta[2 * l + 1])?;
            if l + 1 < self.layers() {
                h = h.elu();
            }
        }
        Ok(h)
    }

    /// Pushes the tangent `(v, 0)` through every layer alongside the values;
    /// the elu slope enters through `elu_deriv`, so both outputs stay
    /// differentiable in `θ`.
    fn forward_jvp<'t>(
        &self,
        theta: &[Var<'t>],
        x: Var<'t>,
        t: &[f64],
        v: &Tensor,
    ) -> Result<(Var<'t>, Var<'t>)> {
        let tape = x.tape();
        check_batch(self.dim, &tape.value_ref(x), t)?;
        check_batch(self.dim, v, t)?;
        let mut h = self.input(x, t)?;
        let mut dh = tape.constant(v.clone()).concat_cols(tape.constant(Tensor::zeros(&[t.len(), 1])))?;
        for l in 0..self.layers() {
            let a = h.matmul(theta[2 * l])?.add_bias(theta[2 * l + 1])?;
            let da = dh.matmul(theta[2 * l])?;
            if l + 1 < self.layers() {
                dh = a.elu_deriv().mul(da)?;
                h = a.elu();
            } else {
                h = a;
                dh = da;
            }
        }
        Ok((h, dh))
    }
}
