use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::sde::SdeSpec;

/// `dx = −λx dt + g dW`, reversed by `+λx`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineDrift1D {
    pub lambda: f64,
    pub g: f64,
}

impl Default for AffineDrift1D {
    fn default() -> Self {
        Self { lambda: 0.5, g: 0.04 }
    }
}

/// A weighted Gaussian component of the marginal `p_t`, started from a point mass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Start {
    pub x0: f64,
    pub weight: f64,
}

/// Equiprobable starts at −1 and +1.
pub const SYMMETRIC_STARTS: [Start; 2] = [Start { x0: -1.0, weight: 0.5 }, Start { x0: 1.0, weight: 0.5 }];

impl AffineDrift1D {
    pub fn new(lambda: f64, g: f64) -> Self {
        Self { lambda, g }
    }

    /// `μ(t; x0) = x0·e^(−λt)`.
    pub fn mean(&self, x0: f64, t: f64) -> f64 {
        x0 * (-self.lambda * t).exp()
    }

    /// `σ²(t) = g²/(2λ)·(1 − e^(−2λt))`, or `g²t` when `λ = 0`.
    pub fn variance(&self, t: f64) -> f64 {
        if self.lambda == 0.0 {
            self.g * self.g * t
        } else {
            self.g * self.g / (2.0 * self.lambda) * (1.0 - (-2.0 * self.lambda * t).exp())
        }
    }

    /// Variance of the mixture marginal at time `t`.
    pub fn mixture_variance(&self, t: f64, starts: &[Start]) -> f64 {
        let total: f64 = starts.iter().map(|s| s.weight).sum();
        let m1: f64 = starts.iter().map(|s| s.weight * self.mean(s.x0, t)).sum::<f64>() / total;
        let m2: f64 = starts.iter().map(|s| s.weight * self.mean(s.x0, t).powi(2)).sum::<f64>() / total;
        m2 - m1 * m1 + self.variance(t)
    }

    /// `∇ log p_t(x)` of the Gaussian mixture reached from `starts`.
    pub fn analytic_score(&self, x: f64, t: f64, starts: &[Start]) -> Result<f64> {
        if !(t > 0.0) {
            return Err(Error::invalid(format!("score of a point-mass start is undefined at t={t}")));
        }
        if starts.is_empty() {
            return Err(Error::invalid("mixture needs at least one component"));
        }
        let var = self.variance(t);
        if !(var > 0.0) {
            return Err(Error::invalid("score needs g > 0"));
        }
        let logs: Vec<f64> = starts
            .iter()
            .map(|s| s.weight.ln() - (x - self.mean(s.x0, t)).powi(2) / (2.0 * var))
            .collect();
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut num = 0.0;
        let mut den = 0.0;
        for (s, l) in starts.iter().zip(&logs) {
            let r = (l - max).exp();
            num += r * (self.mean(s.x0, t) - x) / var;
            den += r;
        }
        Ok(num / den)
    }

    /// Exact draw from `p_t`.
    pub fn sample_marginal(&self, t: f64, starts: &[Start], rng: &mut Rng) -> f64 {
        use rand::Rng as _;
        let total: f64 = starts.iter().map(|s| s.weight).sum();
        let mut u = rng.random::<f64>() * total;
        let mut pick = starts[starts.len() - 1];
        for s in starts {
            if u < s.weight {
                pick = *s;
                break;
            }
            u -= s.weight;
        }
        self.mean(pick.x0, t) + self.variance(t).sqrt() * rng::normal(rng)
    }
}

impl SdeSpec for AffineDrift1D {
    fn name(&self) -> &str {
        "affine-sde"
    }

    fn dim(&self) -> usize {
        1
    }

    fn diffusion(&self, _t: f64) -> f64 {
        self.g
    }

    fn drift(&self, x: &[f64], out: &mut [f64]) {
        for (o, v) in out.iter_mut().zip(x) {
            *o = -self.lambda * v;
        }
    }

    fn reverse_drift(&self, x: &[f64], out: &mut [f64]) {
        for (o, v) in out.iter_mut().zip(x) {
            *o = self.lambda * v;
        }
    }

    fn reverse_drift_tape<'t>(&self, x: Var<'t>) -> Result<Var<'t>> {
        Ok(x.scale(self.lambda))
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({ "lambda": self.lambda, "g": self.g })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Domain;
    use crate::sde::{generate_dataset, Categorical, TimeGrid};

    #[test]
    fn score_vanishes_at_component_mean_and_symmetry_point() {
        let a = AffineDrift1D::default();
        let one = [Start { x0: 1.0, weight: 1.0 }];
        assert_eq!(a.analytic_score(a.mean(1.0, 0.7), 0.7, &one).unwrap(), 0.0);
        assert!(a.analytic_score(0.0, 0.7, &SYMMETRIC_STARTS).unwrap().abs() < 1e-12);
    }

    #[test]
    fn single_component_closed_form() {
        let a = AffineDrift1D::default();
        let var = 0.04f64.powi(2) / 1.0 * (1.0 - (-1.0f64).exp());
        let expect = ((-0.5f64).exp() - 0.5) / var;
        let got = a.analytic_score(0.5, 1.0, &[Start { x0: 1.0, weight: 1.0 }]).unwrap();
        assert!((got - expect).abs() < 1e-9 * expect.abs());
    }

    #[test]
    fn undefined_at_time_zero() {
        assert!(AffineDrift1D::default().analytic_score(0.1, 0.0, &SYMMETRIC_STARTS).is_err());
    }

    #[test]
    fn score_matches_log_histogram_slope() {
        // Finite differences of the log-histogram of Euler-Maruyama samples
        // approximate the score; a wide g keeps the mixture overlapping.
        let a = AffineDrift1D::new(0.5, 0.6);
        let grid = TimeGrid::new(0.0, 0.01, 100).unwrap();
        let n = 40_000;
        let (set, _) = generate_dataset(&a, &Categorical(vec![-1.0, 1.0]), n, &grid, 4).unwrap();
        let (lo, hi, bins) = (-1.2, 1.2, 24);
        let w = (hi - lo) / bins as f64;
        let mut hist = vec![0usize; bins];
        for i in 0..n {
            let x = set.state(i, 100)[0];
            if x >= lo && x < hi {
                hist[((x - lo) / w) as usize] += 1;
            }
        }
        for b in 1..bins - 1 {
            let (l, r) = (hist[b - 1] as f64, hist[b + 1] as f64);
            let fd = (r.ln() - l.ln()) / (2.0 * w);
            let x = lo + (b as f64 + 0.5) * w;
            let exact = a.analytic_score(x, 1.0, &SYMMETRIC_STARTS).unwrap();
            // Poisson error of a log-count difference
            let se = (1.0 / l + 1.0 / r).sqrt() / (2.0 * w);
            assert!((fd - exact).abs() < 4.0 * se + 0.25, "x={x}: {fd} vs {exact}");
        }
    }

    #[test]
    fn mixture_variance_matches_samples() {
        let a = AffineDrift1D::default();
        let mut rng = rng::stream(2, Domain::Misc, 0);
        let xs: Vec<f64> = (0..20_000).map(|_| a.sample_marginal(1.0, &SYMMETRIC_STARTS, &mut rng)).collect();
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64;
        let exact = a.mixture_variance(1.0, &SYMMETRIC_STARTS);
        assert!((v - exact).abs() < 0.03 * exact);
    }
}
