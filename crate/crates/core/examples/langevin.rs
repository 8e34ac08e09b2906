//! Langevin refinement with the closed-form score of the affine SDE: chains
//! started uniformly on [-1, 1] settle onto the two-component marginal.

use smdp::inference::langevin_refine;
use smdp::physics::{AffineDrift1D, SYMMETRIC_STARTS};
use smdp::score::FnScore;
use smdp::Tensor;

fn main() -> smdp::Result<()> {
    let spec = AffineDrift1D::new(0.5, 0.04);
    let t = 1.0;
    let score = FnScore::new(1, move |x: &[f64], _t: f64, out: &mut [f64]| {
        out[0] = spec.analytic_score(x[0], t, &SYMMETRIC_STARTS)?;
        Ok(())
    });
    let chains = 4000;
    let mut x = Tensor::new(&[chains, 1], (0..chains).map(|i| -1.0 + 2.0 * (i as f64 + 0.5) / chains as f64).collect())?;
    let target = spec.mixture_variance(t, &SYMMETRIC_STARTS);
    for round in 1..=5 {
        let (next, _) = langevin_refine(&score, &x, t, 2e-5, 1000, round)?;
        x = next;
        let v = x.data();
        let mean = v.iter().sum::<f64>() / chains as f64;
        let var = v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (chains - 1) as f64;
        println!("after {:5} steps: variance {var:.5} (analytic {target:.5})", round * 1000);
    }
    Ok(())
}
