//! Strong error of Euler-Maruyama on the affine SDE `dx = −λx dt + g dW`,
//! measured against the exact solution driven by the same Brownian path.

use crate::error::{Error, Result};
use crate::rng::{self, Domain};

/// Which pathwise error the order fit uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorNorm {
    /// `E|X_T − X̂_T|` at the final time.
    Terminal,
    /// `sup_t E|X_t − X̂_t|` with `X̂` held piecewise constant between steps,
    /// evaluated on the fine reference grid.
    SupPiecewiseConstant,
}

#[derive(Clone, Copy, Debug)]
pub struct StrongOrderSetup {
    pub lambda: f64,
    pub g: f64,
    pub x0: f64,
    pub horizon: f64,
    pub paths: usize,
    /// Fine reference steps per smallest coarse step.
    pub refine: usize,
    pub norm: ErrorNorm,
    pub seed: u64,
}

impl Default for StrongOrderSetup {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            g: 0.04,
            x0: 0.0,
            horizon: 1.0,
            paths: 2000,
            refine: 8,
            norm: ErrorNorm::SupPiecewiseConstant,
            seed: 0,
        }
    }
}

/// Mean pathwise error for each step size in `dts`.
///
/// The reference path is propagated exactly on a fine grid by sampling each
/// fine Brownian increment jointly with its exponentially weighted integral,
/// so the only error left is the coarse scheme's.
pub fn strong_errors(setup: &StrongOrderSetup, dts: &[f64]) -> Result<Vec<f64>> {
    let StrongOrderSetup { lambda, g, x0, horizon, paths, refine, norm, seed } = *setup;
    if dts.is_empty() || paths == 0 || refine == 0 || !(horizon > 0.0) || lambda < 0.0 {
        return Err(Error::invalid("strong error setup needs step sizes, paths, refine >= 1, horizon > 0, lambda >= 0"));
    }
    let dt_min = dts.iter().cloned().fold(f64::INFINITY, f64::min);
    let h = dt_min / refine as f64;
    let fine_steps = whole_multiple(horizon, h, "horizon")?;
    let ratios: Vec<usize> = dts
        .iter()
        .map(|&dt| whole_multiple(dt, h, "step size"))
        .collect::<Result<_>>()?;
    for (&r, &dt) in ratios.iter().zip(dts) {
        if fine_steps % r != 0 {
            return Err(Error::invalid(format!("step size {dt} does not divide horizon {horizon}")));
        }
    }

    let decay = (-lambda * h).exp();
    let (cov, var_int) = if lambda == 0.0 {
        (h, h)
    } else {
        ((1.0 - decay) / lambda, (1.0 - decay * decay) / (2.0 * lambda))
    };
    let sh = h.sqrt();
    let l21 = cov / sh;
    let l22 = (var_int - l21 * l21).max(0.0).sqrt();

    let mut err_sum = vec![vec![0.0; fine_steps + 1]; dts.len()];
    let mut dw = vec![0.0; fine_steps];
    let mut exact = vec![0.0; fine_steps + 1];
    for p in 0..paths {
        let mut rng = rng::stream(seed, Domain::Misc, p as u64);
        exact[0] = x0;
        for k in 0..fine_steps {
            let z1 = rng::normal(&mut rng);
            let z2 = rng::normal(&mut rng);
            dw[k] = sh * z1;
            let integral = if lambda == 0.0 { dw[k] } else { l21 * z1 + l22 * z2 };
            exact[k + 1] = decay * exact[k] + g * integral;
        }
        for ((&r, &dt), acc) in ratios.iter().zip(dts).zip(err_sum.iter_mut()) {
            let mut x = x0;
            for k in 0..=fine_steps {
                if k % r == 0 && k > 0 {
                    let incr: f64 = dw[k - r..k].iter().sum();
                    x += -lambda * x * dt + g * incr;
                }
                acc[k] += (exact[k] - x).abs();
            }
        }
    }
    Ok(err_sum
        .into_iter()
        .map(|acc| match norm {
            ErrorNorm::Terminal => acc[fine_steps] / paths as f64,
            ErrorNorm::SupPiecewiseConstant => acc.iter().cloned().fold(0.0, f64::max) / paths as f64,
        })
        .collect())
}

/// Least-squares slope of `log error` against `log dt`.
pub fn strong_convergence_order(setup: &StrongOrderSetup, dts: &[f64]) -> Result<f64> {
    if dts.len() < 3 {
        return Err(Error::invalid("order fit needs at least 3 step sizes"));
    }
    let errs = strong_errors(setup, dts)?;
    if let Some(i) = errs.iter().position(|&e| !(e > 0.0)) {
        return Err(Error::invalid(format!("zero error at dt={}; slope undefined", dts[i])));
    }
    let xs: Vec<f64> = dts.iter().map(|d| d.ln()).collect();
    let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    Ok(fit_slope(&xs, &ys))
}

/// Least-squares slope of `ys` against `xs`.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

fn whole_multiple(value: f64, unit: f64, what: &str) -> Result<usize> {
    let r = value / unit;
    let k = r.round();
    if k < 1.0 || (r - k).abs() > 1e-6 * k {
        return Err(Error::invalid(format!("{what} {value} is not a multiple of the fine step {unit}")));
    }
    Ok(k as usize)
}
