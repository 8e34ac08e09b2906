use serde::{Deserialize, Serialize};

use super::{check_batch, eval_on_tape, ModelConfig, Params, ScoreField, ScoreModel};
use crate::autodiff::{InterpQuery, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub t_range: [f64; 2],
    pub x_range: [f64; 2],
    pub t_cells: usize,
    pub x_cells: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            t_range: [0.0, 10.0],
            x_range: [-1.25, 1.25],
            t_cells: 500,
            x_cells: 250,
        }
    }
}

/// Scalar score stored at cell centres of a `t_cells × x_cells` grid and
/// read by bilinear interpolation. Queries outside the domain use the
/// boundary value, and the clamped direction has zero slope.
#[derive(Clone, Debug)]
pub struct GridScore {
    cfg: GridConfig,
    params: Params,
}

/// Position of `v` on an axis of `n` cell centres: lower index, fraction
/// towards the next centre, and whether `v` was clamped.
fn locate(v: f64, lo: f64, hi: f64, n: usize) -> (usize, f64, bool) {
    let h = (hi - lo) / n as f64;
    let raw = (v - lo) / h - 0.5;
    let u = raw.clamp(0.0, (n - 1) as f64);
    let i = (u.floor() as usize).min(n - 2);
    (i, u - i as f64, raw != u)
}

impl GridScore {
    pub fn new(cfg: GridConfig) -> Result<Self> {
        let ok_range = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[1] > r[0];
        if cfg.t_cells < 2 || cfg.x_cells < 2 || !ok_range(cfg.t_range) || !ok_range(cfg.x_range) {
            return Err(Error::Config(format!("invalid grid score layout {cfg:?}")));
        }
        let params = Params::zeros(vec![vec![cfg.t_cells * cfg.x_cells]]);
        Ok(Self { cfg, params })
    }

    pub fn grid_config(&self) -> &GridConfig {
        &self.cfg
    }

    pub fn cell(&self, it: usize, ix: usize) -> f64 {
        self.params.as_slice()[it * self.cfg.x_cells + ix]
    }

    pub fn set_cell(&mut self, it: usize, ix: usize, v: f64) {
        let nx = self.cfg.x_cells;
        self.params.as_mut_slice()[it * nx + ix] = v;
    }

    /// Centre of cell `(it, ix)` in `(t, x)` coordinates.
    pub fn cell_center(&self, it: usize, ix: usize) -> (f64, f64) {
        let c = &self.cfg;
        let ht = (c.t_range[1] - c.t_range[0]) / c.t_cells as f64;
        let hx = (c.x_range[1] - c.x_range[0]) / c.x_cells as f64;
        (c.t_range[0] + (it as f64 + 0.5) * ht, c.x_range[0] + (ix as f64 + 0.5) * hx)
    }

    pub fn query(&self, x: f64, t: f64) -> InterpQuery {
        let c = &self.cfg;
        let nx = c.x_cells;
        let (it, ft, _) = locate(t, c.t_range[0], c.t_range[1], c.t_cells);
        let (ix, fx, clamped) = locate(x, c.x_range[0], c.x_range[1], nx);
        let slope = if clamped { 0.0 } else { c.x_cells as f64 / (c.x_range[1] - c.x_range[0]) };
        let base = it * nx + ix;
        InterpQuery {
            idx: [base, base + 1, base + nx, base + nx + 1],
            w: [(1.0 - ft) * (1.0 - fx), (1.0 - ft) * fx, ft * (1.0 - fx), ft * fx],
            dx: [-(1.0 - ft) * slope, (1.0 - ft) * slope, -ft * slope, ft * slope],
        }
    }

    fn queries(&self, x: &Tensor, t: &[f64]) -> Vec<InterpQuery> {
        x.data().iter().zip(t).map(|(&xv, &tv)| self.query(xv, tv)).collect()
    }
}

impl ScoreField for GridScore {
    fn dim(&self) -> usize {
        1
    }

    fn eval(&self, x: &Tensor, t: &[f64]) -> Result<Tensor> {
        eval_on_tape(self, x, t)
    }
}

impl ScoreModel for GridScore {
    fn config(&self) -> ModelConfig {
        ModelConfig::Grid(self.cfg.clone())
    }

    fn params(&self) -> &Params {
        &self.params
    }

    fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    fn forward<'t>(&self, theta: &[Var<'t>], x: Var<'t>, t: &[f64]) -> Result<Var<'t>> {
        let queries = {
            let xv = x.tape().value_ref(x);
            check_batch(1, &xv, t)?;
            self.queries(&xv, t)
        };
        theta[0].interp(x, queries)
    }

    /// The directional derivative reads the same cells with the slope
    /// weights scaled by `v`; it is piecewise constant in `x`.
    fn forward_jvp<'t>(
        &self,
        theta: &[Var<'t>],
        x: Var<'t>,
        t: &[f64],
        v: &Tensor,
    ) -> Result<(Var<'t>, Var<'t>)> {
        check_batch(1, v, t)?;
        let s = self.forward(theta, x, t)?;
        let queries = {
            let xv = x.tape().value_ref(x);
            self.queries(&xv, t)
        };
        let slope_queries = queries
            .into_iter()
            .zip(v.data())
            .map(|(q, &vv)| InterpQuery {
                idx: q.idx,
                w: q.dx.map(|d| d * vv),
                dx: [0.0; 4],
            })
            .collect();
        let jv = theta[0].interp(x, slope_queries)?;
        Ok((s, jv))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use proptest::prelude::*;

    fn small() -> GridScore {
        GridScore::new(GridConfig { t_range: [0.0, 1.0], x_range: [-1.0, 1.0], t_cells: 4, x_cells: 8 }).unwrap()
    }

    #[test]
    fn zero_initialized() {
        let g = GridScore::new(GridConfig::default()).unwrap();
        assert_eq!(g.param_count(), 500 * 250);
        assert!(g.params().as_slice().iter().all(|&v| v == 0.0));
        let x = Tensor::matrix(3, 1, vec![-2.0, 0.3, 1.0]).unwrap();
        assert!(g.eval(&x, &[0.0, 5.0, 11.0]).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn node_query_returns_cell_value() {
        let mut g = small();
        g.set_cell(2, 5, 0.75);
        let (t, x) = g.cell_center(2, 5);
        let s = g.eval(&Tensor::matrix(1, 1, vec![x]).unwrap(), &[t]).unwrap();
        assert_eq!(s.data(), &[0.75]);
    }

    #[test]
    fn node_query_gradient_touches_one_cell() {
        let g = small();
        let (t, x) = g.cell_center(1, 3);
        let tape = Tape::new();
        let theta = g.params().bind(&tape, true);
        let s = g.forward(&theta, tape.constant(Tensor::matrix(1, 1, vec![x]).unwrap()), &[t]).unwrap();
        let loss = s.add_scalar(1.0).square().sum();
        let grad = g.params().gather(&tape.backward(loss).unwrap(), &theta).unwrap();
        for (i, &v) in grad.iter().enumerate() {
            if i == 8 + 3 {
                assert_eq!(v, 2.0);
            } else {
                assert_eq!(v, 0.0, "cell {i}");
            }
        }
    }

    #[test]
    fn midpoint_is_average_and_clamps_outside() {
        let mut g = small();
        g.set_cell(0, 0, 1.0);
        g.set_cell(0, 1, 3.0);
        let (t, x0) = g.cell_center(0, 0);
        let (_, x1) = g.cell_center(0, 1);
        let mid = g.eval(&Tensor::matrix(1, 1, vec![0.5 * (x0 + x1)]).unwrap(), &[t]).unwrap();
        assert!((mid.data()[0] - 2.0).abs() < 1e-12);
        let out = g.eval(&Tensor::matrix(1, 1, vec![-5.0]).unwrap(), &[-3.0]).unwrap();
        assert_eq!(out.data(), &[1.0]);
        assert_eq!(g.query(-5.0, 0.5).dx, [0.0; 4]);
    }

    #[test]
    fn input_slope_matches_difference_quotient() {
        let mut g = small();
        for (i, v) in g.params_mut().as_mut_slice().iter_mut().enumerate() {
            *v = (i as f64 * 0.7).sin();
        }
        let (x, t) = (0.13, 0.41);
        let tape = Tape::new();
        let theta = g.params().bind(&tape, false);
        let xv = tape.leaf(Tensor::matrix(1, 1, vec![x]).unwrap());
        let one = Tensor::matrix(1, 1, vec![1.0]).unwrap();
        let (s, jv) = g.forward_jvp(&theta, xv, &[t], &one).unwrap();
        let dx = tape.backward(s.sum()).unwrap().wrt(xv).unwrap().item().unwrap();
        let h = 1e-7;
        let at = |x: f64| g.eval(&Tensor::matrix(1, 1, vec![x]).unwrap(), &[t]).unwrap().data()[0];
        let fd = (at(x + h) - at(x - h)) / (2.0 * h);
        assert!((dx - fd).abs() < 1e-6);
        assert!((tape.value(jv).data()[0] - fd).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn at_most_four_cells_get_gradient(x in -2.0f64..2.0, t in -0.5f64..1.5) {
            let mut g = small();
            g.params_mut().as_mut_slice().iter_mut().for_each(|v| *v = 0.3);
            let tape = Tape::new();
            let theta = g.params().bind(&tape, true);
            let s = g.forward(&theta, tape.constant(Tensor::matrix(1, 1, vec![x]).unwrap()), &[t]).unwrap();
            let grad = g.params().gather(&tape.backward(s.square().sum()).unwrap(), &theta).unwrap();
            prop_assert!(grad.iter().filter(|&&v| v != 0.0).count() <= 4);
        }

        #[test]
        fn continuous_in_x(x in -1.2f64..1.2, t in 0.0f64..1.0) {
            let mut g = small();
            for (i, v) in g.params_mut().as_mut_slice().iter_mut().enumerate() {
                *v = (i as f64).cos();
            }
            let at = |x: f64| g.eval(&Tensor::matrix(1, 1, vec![x]).unwrap(), &[t]).unwrap().data()[0];
            prop_assert!((at(x) - at(x + 1e-9)).abs() < 1e-6);
        }
    }
}
