use crate::autodiff::{sign, Var};
use crate::error::{Error, Result};
use crate::sde::SdeSpec;

/// `dx = −λ1·sign(x)·x² dt + λ2 dW`, reversed by `+λ1·sign(x)·x²`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadraticDrift1D {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for QuadraticDrift1D {
    fn default() -> Self {
        Self {
            lambda1: 7.0,
            lambda2: 0.03,
        }
    }
}

impl SdeSpec for QuadraticDrift1D {
    fn name(&self) -> &str {
        "toy-sde"
    }

    fn dim(&self) -> usize {
        1
    }

    fn diffusion(&self, _t: f64) -> f64 {
        self.lambda2
    }

    fn drift(&self, x: &[f64], out: &mut [f64]) {
        for (o, &v) in out.iter_mut().zip(x) {
            *o = -self.lambda1 * sign(v) * v * v;
        }
    }

    fn reverse_drift(&self, x: &[f64], out: &mut [f64]) {
        for (o, &v) in out.iter_mut().zip(x) {
            *o = self.lambda1 * sign(v) * v * v;
        }
    }

    fn reverse_drift_tape<'t>(&self, x: Var<'t>) -> Result<Var<'t>> {
        Ok(x.sign().mul(x.square())?.scale(self.lambda1))
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({ "lambda1": self.lambda1, "lambda2": self.lambda2 })
    }
}

/// Half-width of the end-state window in which the two-point posterior is balanced.
pub const POSTERIOR_WINDOW: f64 = 0.1;

/// Ground-truth posterior over initial states `{−1, +1}` for end states near 0.
pub fn toy_posterior_reference(x_end: f64) -> Result<[(f64, f64); 2]> {
    if !(x_end.abs() <= POSTERIOR_WINDOW) {
        return Err(Error::invalid(format!(
            "end state {x_end} outside [-{POSTERIOR_WINDOW}, {POSTERIOR_WINDOW}]"
        )));
    }
    Ok([(-1.0, 0.5), (1.0, 0.5)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::tensor::Tensor;

    #[test]
    fn drift_and_reverse_are_opposite() {
        let spec = QuadraticDrift1D::default();
        let (mut a, mut b) = ([0.0; 3], [0.0; 3]);
        spec.drift(&[-0.5, 0.0, 1.0], &mut a);
        spec.reverse_drift(&[-0.5, 0.0, 1.0], &mut b);
        assert_eq!(a, [1.75, 0.0, -7.0]);
        assert_eq!(b, [-1.75, 0.0, 7.0]);
    }

    #[test]
    fn tape_reverse_step_matches_plain() {
        let spec = QuadraticDrift1D::default();
        let tape = Tape::new();
        let x = tape.leaf(Tensor::matrix(2, 1, vec![0.3, -0.8]).unwrap());
        let y = spec.reverse_advance_tape(x, &[0.02, 0.04]).unwrap().value();
        let mut expect = [0.0];
        spec.reverse_advance(&[-0.8], 0.04, &mut expect).unwrap();
        assert_eq!(y.data()[1], expect[0]);
        assert!((y.data()[0] - (0.3 + 0.02 * 7.0 * 0.09)).abs() < 1e-15);
    }

    #[test]
    fn posterior_reference_window() {
        assert_eq!(toy_posterior_reference(0.0).unwrap(), [(-1.0, 0.5), (1.0, 0.5)]);
        assert_eq!(toy_posterior_reference(0.05).unwrap(), [(-1.0, 0.5), (1.0, 0.5)]);
        assert!(toy_posterior_reference(0.2).is_err());
        assert!(toy_posterior_reference(f64::NAN).is_err());
    }
}
