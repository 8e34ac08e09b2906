//! Concrete systems: the quadratic toy drift, the affine drift with a
//! closed-form score, and the spectral heat equation.

mod affine;
mod grf;
mod heat;
pub mod spectral;
mod toy;

use std::sync::Arc;

pub use affine::{AffineDrift1D, Start, SYMMETRIC_STARTS};
pub use grf::{sample_grf, GrfSampler, GrfSpectrum};
pub use heat::{heat_forward, HeatEquation2D, HeatSolver, SpectralDecay, SpectralProfile, MAX_AMPLIFICATION};
pub use toy::{toy_posterior_reference, QuadraticDrift1D, POSTERIOR_WINDOW};

use crate::autodiff::Var;
use crate::error::Result;
use crate::sde::SdeSpec;

/// Wraps a system and drops its reverse simulator, so a learned score has to
/// account for the whole backward update. Forward dynamics are unchanged.
#[derive(Clone)]
pub struct WithoutReversePhysics {
    inner: Arc<dyn SdeSpec>,
    name: String,
}

impl WithoutReversePhysics {
    pub fn new(inner: Arc<dyn SdeSpec>) -> Self {
        let name = format!("{}-score-only", inner.name());
        Self { inner, name }
    }
}

impl SdeSpec for WithoutReversePhysics {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn diffusion(&self, t: f64) -> f64 {
        self.inner.diffusion(t)
    }

    fn drift(&self, x: &[f64], out: &mut [f64]) {
        self.inner.drift(x, out)
    }

    fn reverse_drift(&self, _x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
    }

    fn reverse_drift_tape<'t>(&self, x: Var<'t>) -> Result<Var<'t>> {
        Ok(x.scale(0.0))
    }

    fn advance(&self, x: &[f64], dt: f64, out: &mut [f64]) {
        self.inner.advance(x, dt, out)
    }

    fn reverse_advance(&self, x: &[f64], _dt: f64, out: &mut [f64]) -> Result<()> {
        out.copy_from_slice(x);
        Ok(())
    }

    fn reverse_advance_tape<'t>(&self, x: Var<'t>, _dts: &[f64]) -> Result<Var<'t>> {
        Ok(x)
    }

    fn project_noise(&self, z: &mut [f64]) {
        self.inner.project_noise(z)
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({ "inner": self.inner.describe(), "reverse_physics": false })
    }
}
