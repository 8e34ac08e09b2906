//! Simulates the quadratic-drift toy SDE from the two point masses at ±1 and
//! prints a histogram of the end states next to the reference posterior.
//!
//! cargo run --release --example simulate_toy -- [trajectories]

use smdp::physics::{toy_posterior_reference, QuadraticDrift1D};
use smdp::sde::{generate_dataset, Categorical, TimeGrid};

fn main() -> smdp::Result<()> {
    let n: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(2500);
    let spec = QuadraticDrift1D::default();
    let grid = TimeGrid::new(0.0, 0.02, 500)?;
    let (data, _) = generate_dataset(&spec, &Categorical(vec![-1.0, 1.0]), n, &grid, 1)?;
    let ends: Vec<f64> = (0..data.len()).map(|i| data.state(i, grid.steps)[0]).collect();
    let bins = 20;
    let lo = ends.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ends.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 1e-12;
    let mut counts = vec![0usize; bins];
    for e in &ends {
        let b = ((e - lo) / (hi - lo) * bins as f64).floor();
        if (0.0..bins as f64).contains(&b) {
            counts[b as usize] += 1;
        }
    }
    println!("x(T) histogram over {n} trajectories, T = {}", grid.end());
    let peak = *counts.iter().max().unwrap_or(&1).max(&1);
    for (b, c) in counts.iter().enumerate() {
        let x = lo + (b as f64 + 0.5) * (hi - lo) / bins as f64;
        println!("{x:+.3} {:5} {}", c, "#".repeat(c * 50 / peak));
    }
    let [(a, pa), (b, pb)] = toy_posterior_reference(0.0)?;
    println!("posterior of x(0) given x(T) = 0: P(x0 = {a}) = {pa:.2}, P(x0 = {b}) = {pb:.2}");
    Ok(())
}
