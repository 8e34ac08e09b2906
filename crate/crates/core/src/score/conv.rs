use serde::{Deserialize, Serialize};

use super::{check_batch, eval_on_tape, fan_in_uniform, ModelConfig, Params, ScoreField, ScoreModel};
use crate::autodiff::{ConvGeometry, Var};
use crate::error::{Error, Result};
use crate::rng::{self, Domain};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConvConfig {
    /// Side length of the square field.
    pub size: usize,
    /// Filters per hidden layer.
    pub width: usize,
    /// Residual blocks in each of the encoder and decoder.
    pub blocks: usize,
    pub kernel: usize,
    pub leaky_slope: f64,
}

impl Default for ConvConfig {
    fn default() -> Self {
        Self {
            size: 16,
            width: 8,
            blocks: 2,
            kernel: 4,
            leaky_slope: 0.01,
        }
    }
}

impl ConvConfig {
    pub fn paper_scale(size: usize) -> Self {
        Self {
            size,
            width: 32,
            blocks: 4,
            ..Self::default()
        }
    }
}

const FINAL_KERNEL: usize = 5;

/// Periodic residual encoder-decoder on `d × d` fields.
///
/// The input is the field stacked with a constant channel holding `t`. The
/// encoder is a k-conv to `width` channels, residual blocks of two
/// conv+LeakyReLU layers, and a 1×1 conv back to one channel; the decoder
/// mirrors it with transposed convolutions and ends in a 5×5 conv. The
/// output is projected onto zero-mean fields.
#[derive(Clone, Debug)]
pub struct ConvScore2D {
    cfg: ConvConfig,
    params: Params,
}

#[derive(Clone, Copy)]
enum Layer {
    Conv(ConvGeometry),
    Transposed(ConvGeometry),
}

impl Layer {
    fn geometry(&self) -> ConvGeometry {
        match *self {
            Layer::Conv(g) | Layer::Transposed(g) => g,
        }
    }

    fn with_batch(self, batch: usize) -> Self {
        match self {
            Layer::Conv(g) => Layer::Conv(ConvGeometry { batch, ..g }),
            Layer::Transposed(g) => Layer::Transposed(ConvGeometry { batch, ..g }),
        }
    }

    fn fan_in(&self) -> usize {
        match *self {
            Layer::Conv(g) => g.c_in * g.k * g.k,
            Layer::Transposed(g) => g.c_out * g.k * g.k,
        }
    }

    fn out_channels(&self) -> usize {
        match *self {
            Layer::Conv(g) => g.c_out,
            Layer::Transposed(g) => g.c_in,
        }
    }

    fn apply<'t>(&self, x: Var<'t>, w: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
        match *self {
            Layer::Conv(g) => x.conv2d(w, Some(b), g),
            Layer::Transposed(g) => x.conv_transpose2d(w, Some(b), g),
        }
    }
}

impl ConvScore2D {
    pub fn new(cfg: ConvConfig, seed: u64) -> Result<Self> {
        if cfg.size == 0 || cfg.width == 0 || cfg.kernel == 0 || !cfg.leaky_slope.is_finite() {
            return Err(Error::Config(format!("invalid conv score layout {cfg:?}")));
        }
        let layers = Self::layers(&cfg);
        let shapes = layers
            .iter()
            .flat_map(|l| {
                let g = l.geometry();
                [vec![g.c_out, g.c_in, g.k, g.k], vec![l.out_channels()]]
            })
            .collect();
        let mut params = Params::zeros(shapes);
        let mut rng = rng::stream(seed, Domain::Init, 0);
        for (i, l) in layers.iter().enumerate() {
            fan_in_uniform(&mut rng, params.block_mut(2 * i), l.fan_in());
        }
        Ok(Self { cfg, params })
    }

    pub fn conv_config(&self) -> &ConvConfig {
        &self.cfg
    }

    fn layers(cfg: &ConvConfig) -> Vec<Layer> {
        let (d, w, k) = (cfg.size, cfg.width, cfg.kernel);
        let g = |c_in, c_out, k| ConvGeometry { batch: 1, c_in, c_out, h: d, w: d, k };
        let mut layers = vec![Layer::Conv(g(2, w, k))];
        layers.extend((0..2 * cfg.blocks).map(|_| Layer::Conv(g(w, w, k))));
        layers.push(Layer::Conv(g(w, 1, 1)));
        layers.push(Layer::Transposed(g(w, 1, k)));
        layers.extend((0..2 * cfg.blocks).map(|_| Layer::Transposed(g(w, w, k))));
        layers.push(Layer::Conv(g(w, 1, FINAL_KERNEL)));
        layers
    }
}

impl ScoreField for ConvScore2D {
    fn dim(&self) -> usize {
        self.cfg.size * self.cfg.size
    }

    fn eval(&self, x: &Tensor, t: &[f64]) -> Result<Tensor> {
        eval_on_tape(self, x, t)
    }
}

impl ScoreModel for ConvScore2D {
    fn config(&self) -> ModelConfig {
        ModelConfig::Conv(self.cfg.clone())
    }

    fn params(&self) -> &Params {
        &self.params
    }

    fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    fn forward<'t>(&self, theta: &[Var<'t>], x: Var<'t>, t: &[f64]) -> Result<Var<'t>> {
        let tape = x.tape();
        let plane = self.dim();
        check_batch(plane, &tape.value_ref(x), t)?;
        let batch = t.len();
        let time: Vec<f64> = t.iter().flat_map(|&tv| std::iter::repeat_n(tv, plane)).collect();
        let mut h = x.concat_cols(tape.constant(Tensor::new(&[batch, plane], time)?))?;

        let layers: Vec<Layer> = Self::layers(&self.cfg).into_iter().map(|l| l.with_batch(batch)).collect();
        let slope = self.cfg.leaky_slope;
        let nb = self.cfg.blocks;
        let mut li = 0;
        let apply = |h: Var<'t>, li: &mut usize| -> Result<Var<'t>> {
            let out = layers[*li].apply(h, theta[2 * *li], theta[2 * *li + 1])?;
            *li += 1;
            Ok(out)
        };
        for half in 0..2 {
            h = apply(h, &mut li)?;
            for _ in 0..nb {
                let a = apply(h, &mut li)?.leaky_relu(slope);
                let b = apply(a, &mut li)?.leaky_relu(slope);
                h = h.add(b)?;
            }
            if half == 0 {
                h = apply(h, &mut li)?;
            }
        }
        let out = apply(h, &mut li)?;
        out.reshape(&[batch, plane]).map(|v| v.center_rows())
    }

    fn forward_jvp<'t>(
        &self,
        _theta: &[Var<'t>],
        _x: Var<'t>,
        _t: &[f64],
        _v: &Tensor,
    ) -> Result<(Var<'t>, Var<'t>)> {
        Err(Error::invalid("input Jacobians are not available for the conv score"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_difference_gradient, relative_error, Tape};

    fn tiny() -> ConvScore2D {
        ConvScore2D::new(ConvConfig { size: 4, width: 2, blocks: 1, kernel: 3, leaky_slope: 0.1 }, 9).unwrap()
    }

    #[test]
    fn output_shape_and_zero_mean() {
        let m = ConvScore2D::new(ConvConfig::default(), 1).unwrap();
        let x = Tensor::new(&[3, 256], (0..768).map(|i| (i as f64 * 0.1).sin()).collect()).unwrap();
        let s = m.eval(&x, &[0.0, 0.1, 0.2]).unwrap();
        assert_eq!(s.shape(), &[3, 256]);
        for r in 0..3 {
            assert!(s.row(r).iter().sum::<f64>().abs() < 1e-10);
        }
        assert!(s.max_abs() > 0.0);
    }

    #[test]
    fn paper_scale_parameter_count() {
        let m = ConvScore2D::new(ConvConfig::paper_scale(32), 0).unwrap();
        let conv = |ci: usize, co: usize, k: usize| ci * co * k * k + co;
        let expected = conv(2, 32, 4)
            + 8 * conv(32, 32, 4)
            + conv(32, 1, 1)
            + conv(1, 32, 4)
            + 8 * conv(32, 32, 4)
            + conv(32, 1, 5);
        assert_eq!(m.param_count(), expected);
    }

    #[test]
    fn rows_are_independent() {
        let m = tiny();
        let x = Tensor::new(&[2, 16], (0..32).map(|i| (i as f64).cos()).collect()).unwrap();
        let both = m.eval(&x, &[0.3, 0.7]).unwrap();
        let second = m.eval(&x.slice_rows(1, 2), &[0.7]).unwrap();
        assert_eq!(both.row(1), second.row(0));
    }

    #[test]
    fn parameter_gradient_matches_finite_differences() {
        let m = tiny();
        let x = Tensor::new(&[2, 16], (0..32).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let t = [0.05, 0.15];
        let weights: Vec<f64> = (0..32).map(|i| (i as f64 * 0.11).cos()).collect();
        let tape = Tape::new();
        let theta = m.params().bind(&tape, true);
        let s = m.forward(&theta, tape.constant(x.clone()), &t).unwrap();
        let w = tape.constant(Tensor::new(&[2, 16], weights.clone()).unwrap());
        let loss = s.mul(w).unwrap().square().sum();
        let g = m.params().gather(&tape.backward(loss).unwrap(), &theta).unwrap();
        let f = |p: &Tensor| {
            let mut m = m.clone();
            m.params_mut().as_mut_slice().copy_from_slice(p.data());
            let s = m.eval(&x, &t)?;
            Ok(s.data().iter().zip(&weights).map(|(a, b)| (a * b).powi(2)).sum())
        };
        let fd = finite_difference_gradient(f, &Tensor::vector(m.params().as_slice().to_vec()), 1e-6).unwrap().into_data();
        assert!(relative_error(&g, &fd) < 1e-5, "{}", relative_error(&g, &fd));
    }
}
