//! Stochastic heat equation on a periodic `d × d` grid, solved exactly in
//! Fourier space.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::spectral::{wavenumber, Fft2, IMAG_RESIDUE};
use crate::autodiff::{LinearMap, Var};
use crate::error::{Error, Result};
use crate::rng;
use crate::sde::SdeSpec;
use crate::tensor::Tensor;

/// Largest mode multiplier a backward step may produce.
pub const MAX_AMPLIFICATION: f64 = 1e12;

/// Per-mode decay rate table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SpectralProfile {
    /// `ν(i, j) = min(i, j, d−i, d−j)` with index 0 at the corner.
    #[default]
    PaperLiteral,
    /// `ν(i, j) = κ(i)² + κ(j)²`, `κ(i) = min(i, d−i)`: the periodic Laplacian.
    Quadratic,
}

/// Rates `α·ν(i, j)` and multipliers `A(dt) = exp(−dt·α·ν)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralDecay {
    d: usize,
    profile: SpectralProfile,
    alpha: f64,
    rates: Vec<f64>,
}

impl SpectralDecay {
    pub fn new(d: usize, profile: SpectralProfile, alpha: f64) -> Result<Self> {
        if d < 2 || !(alpha >= 0.0) {
            return Err(Error::invalid(format!("spectral decay needs d >= 2 and alpha >= 0 (d={d}, alpha={alpha})")));
        }
        let mut rates = Vec::with_capacity(d * d);
        for i in 0..d {
            for j in 0..d {
                let nu = match profile {
                    SpectralProfile::PaperLiteral => i.min(j).min(d - i).min(d - j) as f64,
                    SpectralProfile::Quadratic => {
                        let (ki, kj) = (wavenumber(i, d) as f64, wavenumber(j, d) as f64);
                        ki * ki + kj * kj
                    }
                };
                rates.push(alpha * nu);
            }
        }
        Ok(Self { d, profile, alpha, rates })
    }

    pub fn size(&self) -> usize {
        self.d
    }

    pub fn profile(&self) -> SpectralProfile {
        self.profile
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    /// `A(dt)`; errors if any entry exceeds [`MAX_AMPLIFICATION`].
    pub fn multipliers(&self, dt: f64) -> Result<Vec<f64>> {
        let table: Vec<f64> = self.rates.iter().map(|r| (-dt * r).exp()).collect();
        if let Some((k, &a)) = table
            .iter()
            .enumerate()
            .find(|(_, a)| !a.is_finite() || **a > MAX_AMPLIFICATION)
        {
            return Err(Error::Divergence {
                step: 0,
                detail: format!(
                    "mode ({}, {}) amplified by {a:e} for dt={dt}",
                    k / self.d,
                    k % self.d
                ),
            });
        }
        Ok(table)
    }
}

/// Exact spectral propagator `x ↦ F⁻¹(A(dt) ∘ F x)`.
#[derive(Clone, Debug)]
pub struct HeatSolver {
    decay: SpectralDecay,
    fft: Fft2,
}

impl HeatSolver {
    pub fn new(decay: SpectralDecay) -> Self {
        let fft = Fft2::new(decay.size());
        Self { decay, fft }
    }

    pub fn decay(&self) -> &SpectralDecay {
        &self.decay
    }

    pub fn fft(&self) -> &Fft2 {
        &self.fft
    }

    pub fn size(&self) -> usize {
        self.decay.size()
    }

    /// Multiplies every mode by `table` and returns the real field.
    pub fn apply_table(&self, field: &[f64], table: &[f64]) -> Result<Vec<f64>> {
        let d = self.size();
        if field.len() != d * d {
            return Err(Error::ShapeMismatch {
                op: "heat step",
                lhs: vec![d, d],
                rhs: vec![field.len()],
            });
        }
        let mut spec = self.fft.forward(field);
        for (c, a) in spec.iter_mut().zip(table) {
            *c *= a;
        }
        self.fft.inverse_in_place(&mut spec);
        let residue = spec.iter().fold(0.0_f64, |m, c| m.max(c.im.abs()));
        let scale = spec.iter().fold(1.0_f64, |m, c| m.max(c.re.abs()));
        if residue > IMAG_RESIDUE * scale {
            return Err(Error::non_finite(format!("imaginary residue {residue:e} after inverse transform")));
        }
        Ok(spec.into_iter().map(|c| c.re).collect())
    }

    /// Advances by `dt`; negative `dt` runs the solver backward.
    pub fn step(&self, field: &[f64], dt: f64) -> Result<Vec<f64>> {
        self.apply_table(field, &self.decay.multipliers(dt)?)
    }
}

/// Free-function form of [`HeatSolver::step`].
pub fn heat_forward(field: &[f64], dt: f64, decay: &SpectralDecay) -> Result<Vec<f64>> {
    HeatSolver::new(decay.clone()).step(field, dt)
}

/// `dx = P_h x dt + g dW` on a `d × d` periodic grid.
///
/// Noise is projected onto zero-mean fields, so the spatial mean is
/// conserved exactly by the forward and reverse dynamics.
#[derive(Clone, Debug)]
pub struct HeatEquation2D {
    solver: Arc<HeatSolver>,
    g: f64,
}

impl HeatEquation2D {
    pub fn new(d: usize, profile: SpectralProfile, alpha: f64, g: f64) -> Result<Self> {
        Ok(Self {
            solver: Arc::new(HeatSolver::new(SpectralDecay::new(d, profile, alpha)?)),
            g,
        })
    }

    pub fn solver(&self) -> &Arc<HeatSolver> {
        &self.solver
    }

    pub fn resolution(&self) -> usize {
        self.solver.size()
    }

    fn generator(&self, x: &[f64], sign: f64, out: &mut [f64]) {
        let table: Vec<f64> = self.solver.decay.rates().iter().map(|r| -sign * r).collect();
        let y = self
            .solver
            .apply_table(x, &table)
            .expect("generator keeps fields real");
        out.copy_from_slice(&y);
    }
}

/// Batched spectral step applied row by row, each row with its own `dt`.
/// The multiplier depends on `|k|` only, so the map is symmetric.
struct BatchedHeatStep {
    solver: Arc<HeatSolver>,
    tables: Vec<Vec<f64>>,
}

impl LinearMap for BatchedHeatStep {
    fn apply(&self, input: &Tensor) -> Result<Tensor> {
        let mut out = input.clone();
        for (r, table) in self.tables.iter().enumerate() {
            let y = self.solver.apply_table(input.row(r), table)?;
            out.row_mut(r).copy_from_slice(&y);
        }
        Ok(out)
    }
}

/// Batched generator `±α·ν` in Fourier space.
struct Generator {
    solver: Arc<HeatSolver>,
    table: Vec<f64>,
}

impl LinearMap for Generator {
    fn apply(&self, input: &Tensor) -> Result<Tensor> {
        let mut out = input.clone();
        for r in 0..input.rows() {
            let y = self.solver.apply_table(input.row(r), &self.table)?;
            out.row_mut(r).copy_from_slice(&y);
        }
        Ok(out)
    }
}

impl SdeSpec for HeatEquation2D {
    fn name(&self) -> &str {
        "heat-equation"
    }

    fn dim(&self) -> usize {
        let d = self.resolution();
        d * d
    }

    fn diffusion(&self, _t: f64) -> f64 {
        self.g
    }

    fn drift(&self, x: &[f64], out: &mut [f64]) {
        self.generator(x, 1.0, out)
    }

    fn reverse_drift(&self, x: &[f64], out: &mut [f64]) {
        self.generator(x, -1.0, out)
    }

    fn reverse_drift_tape<'t>(&self, x: Var<'t>) -> Result<Var<'t>> {
        x.linear(Arc::new(Generator {
            solver: self.solver.clone(),
            table: self.solver.decay.rates().to_vec(),
        }))
    }

    fn advance(&self, x: &[f64], dt: f64, out: &mut [f64]) {
        let y = self.solver.step(x, dt).expect("forward heat step is a contraction");
        out.copy_from_slice(&y);
    }

    fn reverse_advance(&self, x: &[f64], dt: f64, out: &mut [f64]) -> Result<()> {
        let y = self.solver.step(x, -dt)?;
        out.copy_from_slice(&y);
        Ok(())
    }

    fn reverse_advance_tape<'t>(&self, x: Var<'t>, dts: &[f64]) -> Result<Var<'t>> {
        let tables = dts
            .iter()
            .map(|&dt| self.solver.decay.multipliers(-dt))
            .collect::<Result<Vec<_>>>()?;
        x.linear(Arc::new(BatchedHeatStep {
            solver: self.solver.clone(),
            tables,
        }))
    }

    fn project_noise(&self, z: &mut [f64]) {
        rng::center(z);
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({
            "d": self.resolution(),
            "profile": self.solver.decay.profile(),
            "alpha": self.solver.decay.alpha(),
            "g": self.g,
        })
    }
}
