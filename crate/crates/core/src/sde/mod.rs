//! Physical systems as SDEs `dx = P(x) dt + g(t) dW`, Euler-Maruyama
//! simulation and trajectory datasets.

mod convergence;
pub(crate) mod dataset;

use rayon::prelude::*;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::rng::{self, Domain, Rng};

pub use convergence::{fit_slope, strong_convergence_order, strong_errors, ErrorNorm, StrongOrderSetup};
pub use dataset::{DatasetSidecar, TrajectorySet, DATASET_MAGIC, DATASET_VERSION};

/// States with any component beyond this magnitude count as divergent.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

pub fn is_divergent(x: &[f64]) -> bool {
    x.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT)
}

/// A physical system together with its approximate reverse simulator.
///
/// States are flat slices of length [`SdeSpec::dim`]. Batched tape
/// methods take `[B, D]` variables.
pub trait SdeSpec: Send + Sync {
    fn name(&self) -> &str;

    fn dim(&self) -> usize;

    fn diffusion(&self, t: f64) -> f64;

    /// `P(x)`.
    fn drift(&self, x: &[f64], out: &mut [f64]);

    /// Right-hand side of the reverse simulator, `P̃⁻¹(x)`.
    fn reverse_drift(&self, x: &[f64], out: &mut [f64]);

    /// [`SdeSpec::reverse_drift`] recorded on a tape for a `[B, D]` batch.
    fn reverse_drift_tape<'t>(&self, x: Var<'t>) -> Result<Var<'t>>;

    /// Deterministic forward solver step. Explicit Euler unless the system
    /// has an exact step.
    fn advance(&self, x: &[f64], dt: f64, out: &mut [f64]) {
        self.drift(x, out);
        for (o, xi) in out.iter_mut().zip(x) {
            *o = xi + dt * *o;
        }
    }

    /// One reverse physics step of size `dt > 0` backward in time.
    fn reverse_advance(&self, x: &[f64], dt: f64, out: &mut [f64]) -> Result<()> {
        self.reverse_drift(x, out);
        for (o, xi) in out.iter_mut().zip(x) {
            *o = xi + dt * *o;
        }
        Ok(())
    }

    /// Batched reverse physics step on a tape; row `b` steps by `dts[b]`.
    fn reverse_advance_tape<'t>(&self, x: Var<'t>, dts: &[f64]) -> Result<Var<'t>> {
        let r = self.reverse_drift_tape(x)?.scale_rows(dts)?;
        x.add(r)
    }

    /// Projection applied to every noise draw. Identity unless the system
    /// constrains its state space.
    fn project_noise(&self, _z: &mut [f64]) {}

    /// Parameters recorded in dataset sidecars.
    fn describe(&self) -> serde_json::Value;
}

/// Equally spaced grid `t_m = t0 + m·dt`, `m = 0..=steps`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub dt: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, dt: f64, steps: usize) -> Result<Self> {
        if !(dt > 0.0) || steps == 0 || !t0.is_finite() {
            return Err(Error::invalid(format!(
                "time grid needs dt > 0 and steps >= 1 (got dt={dt}, steps={steps})"
            )));
        }
        Ok(Self { t0, dt, steps })
    }

    pub fn time(&self, m: usize) -> f64 {
        self.t0 + m as f64 * self.dt
    }

    pub fn end(&self) -> f64 {
        self.time(self.steps)
    }
}

/// `x + dt·P(x) + sqrt(dt)·g(t)·z`, with the system's exact deterministic
/// step substituted for `x + dt·P(x)` where it has one.
pub fn euler_maruyama_step(
    spec: &dyn SdeSpec,
    x: &[f64],
    t: f64,
    dt: f64,
    z: &[f64],
) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(Error::invalid("forward step needs dt > 0"));
    }
    let mut out = vec![0.0; x.len()];
    spec.advance(x, dt, &mut out);
    let amp = dt.sqrt() * spec.diffusion(t);
    if amp != 0.0 {
        for (o, zi) in out.iter_mut().zip(z) {
            *o += amp * zi;
        }
    }
    if is_divergent(&out) {
        return Err(Error::Divergence {
            step: 0,
            detail: format!("state left |x| <= {DIVERGENCE_LIMIT} at t={t}"),
        });
    }
    Ok(out)
}

/// Simulates one trajectory of `grid.steps + 1` states, flattened row-major.
pub fn simulate(spec: &dyn SdeSpec, x0: &[f64], grid: &TimeGrid, rng: &mut Rng) -> Result<Vec<f64>> {
    let d = spec.dim();
    if x0.len() != d {
        return Err(Error::ShapeMismatch {
            op: "simulate",
            lhs: vec![d],
            rhs: vec![x0.len()],
        });
    }
    if is_divergent(x0) {
        return Err(Error::non_finite("initial state"));
    }
    let mut traj = Vec::with_capacity((grid.steps + 1) * d);
    traj.extend_from_slice(x0);
    let mut z = vec![0.0; d];
    for m in 0..grid.steps {
        rng::fill_normal(rng, &mut z);
        spec.project_noise(&mut z);
        let x = &traj[m * d..(m + 1) * d];
        let next = euler_maruyama_step(spec, x, grid.time(m), grid.dt, &z).map_err(|e| match e {
            Error::Divergence { detail, .. } => Error::Divergence { step: m + 1, detail },
            other => other,
        })?;
        traj.extend_from_slice(&next);
    }
    Ok(traj)
}

/// Sampler for the initial distribution `p0`.
pub trait InitialSampler: Sync {
    fn sample(&self, rng: &mut Rng, out: &mut [f64]);
}

impl<F> InitialSampler for F
where
    F: Fn(&mut Rng, &mut [f64]) + Sync,
{
    fn sample(&self, rng: &mut Rng, out: &mut [f64]) {
        self(rng, out)
    }
}

/// Equiprobable choice among fixed scalar values, broadcast over all components.
#[derive(Clone, Debug)]
pub struct Categorical(pub Vec<f64>);

impl InitialSampler for Categorical {
    fn sample(&self, rng: &mut Rng, out: &mut [f64]) {
        use rand::Rng as _;
        let v = self.0[rng.random_range(0..self.0.len())];
        out.iter_mut().for_each(|o| *o = v);
    }
}

pub const MAX_RETRIES: usize = 100;

/// Generates `n` trajectories in parallel. Trajectory `i` depends only on
/// `(seed, i)`, so smaller datasets are prefixes of larger ones.
/// Returns the dataset and the total number of divergence retries.
pub fn generate_dataset(
    spec: &dyn SdeSpec,
    p0: &dyn InitialSampler,
    n: usize,
    grid: &TimeGrid,
    seed: u64,
) -> Result<(TrajectorySet, usize)> {
    if n == 0 {
        return Err(Error::invalid("dataset needs at least one trajectory"));
    }
    let d = spec.dim();
    let per = (grid.steps + 1) * d;
    let slots: Vec<Result<(Vec<f64>, usize)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut last = None;
            for attempt in 0..=MAX_RETRIES {
                let mut rng = rng::stream(seed, Domain::Dataset, ((attempt as u64) << 40) | i as u64);
                let mut x0 = vec![0.0; d];
                p0.sample(&mut rng, &mut x0);
                match simulate(spec, &x0, grid, &mut rng) {
                    Ok(traj) => return Ok((traj, attempt)),
                    Err(e @ Error::Divergence { .. }) => last = Some(e),
                    Err(e) => return Err(e),
                }
            }
            Err(Error::Divergence {
                step: 0,
                detail: format!(
                    "trajectory {i} diverged on all {} attempts: {}",
                    MAX_RETRIES + 1,
                    last.map(|e| e.to_string()).unwrap_or_default()
                ),
            })
        })
        .collect();
    let mut data = Vec::with_capacity(n * per);
    let mut retries = 0;
    for slot in slots {
        let (traj, r) = slot?;
        data.extend_from_slice(&traj);
        retries += r;
    }
    let set = TrajectorySet::new(*grid, d, data, seed, spec.name().to_string(), spec.describe())?;
    Ok((set, retries))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::{AffineDrift1D, QuadraticDrift1D};

    #[test]
    fn zero_dynamics_leave_state_unchanged() {
        let spec = AffineDrift1D::new(0.0, 0.0);
        assert_eq!(euler_maruyama_step(&spec, &[0.7], 0.0, 0.1, &[1.3]).unwrap(), vec![0.7]);
    }

    #[test]
    fn one_explicit_euler_step() {
        let spec = AffineDrift1D::new(0.5, 0.0);
        let x = euler_maruyama_step(&spec, &[1.0], 0.0, 0.1, &[0.0]).unwrap();
        assert!((x[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn quadratic_toy_step() {
        let spec = QuadraticDrift1D::default();
        let x = euler_maruyama_step(&spec, &[1.0], 0.0, 0.02, &[0.0]).unwrap();
        assert!((x[0] - 0.86).abs() < 1e-15);
    }

    #[test]
    fn divergence_is_reported_with_step() {
        let spec = AffineDrift1D::new(-400.0, 0.0);
        let grid = TimeGrid::new(0.0, 0.1, 50).unwrap();
        let mut rng = rng::stream(0, Domain::Misc, 0);
        match simulate(&spec, &[1.0], &grid, &mut rng) {
            Err(Error::Divergence { step, .. }) => assert!(step > 1 && step < 50),
            other => panic!("expected divergence, got {other:?}"),
        }
        assert!(euler_maruyama_step(&spec, &[f64::NAN], 0.0, 0.1, &[0.0]).is_err());
        assert!(euler_maruyama_step(&spec, &[1.0], 0.0, -0.1, &[0.0]).is_err());
    }

    #[test]
    fn noiseless_simulation_is_explicit_euler() {
        let spec = AffineDrift1D::new(0.5, 0.0);
        let grid = TimeGrid::new(0.0, 0.01, 200).unwrap();
        let mut rng = rng::stream(0, Domain::Misc, 0);
        let traj = simulate(&spec, &[1.0], &grid, &mut rng).unwrap();
        let mut x = 1.0f64;
        for m in 0..=200 {
            assert_eq!(traj[m], x);
            let exact = (-0.5 * grid.time(m)).exp();
            assert!((traj[m] - exact).abs() < 0.01 * grid.time(m) + 1e-15);
            x += 0.01 * (-0.5 * x);
        }
    }

    #[test]
    fn toy_trajectories_decay_in_expectation() {
        let spec = QuadraticDrift1D::default();
        let grid = TimeGrid::new(0.0, 0.02, 500).unwrap();
        let (set, retries) = generate_dataset(&spec, &|_: &mut Rng, out: &mut [f64]| out[0] = 1.0, 64, &grid, 5).unwrap();
        assert_eq!(retries, 0);
        let mean_at = |m: usize| (0..64).map(|i| set.state(i, m)[0]).sum::<f64>() / 64.0;
        let marks = [0, 25, 100, 250, 500];
        for w in marks.windows(2) {
            assert!(mean_at(w[1]) < mean_at(w[0]));
        }
    }

    #[test]
    fn binary_initial_distribution_is_balanced() {
        let spec = QuadraticDrift1D::default();
        let grid = TimeGrid::new(0.0, 0.02, 1).unwrap();
        let p0 = Categorical(vec![-1.0, 1.0]);
        let (set, _) = generate_dataset(&spec, &p0, 1000, &grid, 11).unwrap();
        let mean = (0..1000).map(|i| set.state(i, 0)[0]).sum::<f64>() / 1000.0;
        assert!(mean.abs() < 3.0 / 1000f64.sqrt());
        assert!((0..1000).all(|i| set.state(i, 0)[0].abs() == 1.0));
    }

    #[test]
    fn datasets_are_deterministic_and_prefix_stable() {
        let spec = QuadraticDrift1D::default();
        let grid = TimeGrid::new(0.0, 0.02, 20).unwrap();
        let p0 = Categorical(vec![-1.0, 1.0]);
        let (a, _) = generate_dataset(&spec, &p0, 1, &grid, 3).unwrap();
        let (b, _) = generate_dataset(&spec, &p0, 1, &grid, 3).unwrap();
        let (c, _) = generate_dataset(&spec, &p0, 40, &grid, 3).unwrap();
        assert_eq!(a.states().data(), b.states().data());
        assert_eq!(a.states().data(), c.prefix(1).unwrap().states().data());
    }

    #[test]
    fn affine_moments_match_closed_form() {
        let spec = AffineDrift1D::new(0.5, 0.04);
        let grid = TimeGrid::new(0.0, 0.002, 500).unwrap();
        let n = 10_000;
        let (set, _) = generate_dataset(&spec, &|_: &mut Rng, out: &mut [f64]| out[0] = 1.0, n, &grid, 21).unwrap();
        let xs: Vec<f64> = (0..n).map(|i| set.state(i, 500)[0]).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let (mu, s2) = (spec.mean(1.0, 1.0), spec.variance(1.0));
        assert!((mean - mu).abs() < 3.0 * (s2 / n as f64).sqrt());
        assert!((var - s2).abs() < 3.0 * s2 * (2.0 / (n - 1) as f64).sqrt());
    }
}
