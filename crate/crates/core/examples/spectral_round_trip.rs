//! Advances a Gaussian random field under the noise-free heat equation and
//! inverts it with the reverse spectral solver.

use smdp::physics::{sample_grf, GrfSpectrum, HeatEquation2D, SpectralProfile};
use smdp::rng::{self, Domain};
use smdp::sde::SdeSpec;

fn main() -> smdp::Result<()> {
    let d = 32;
    let spec = HeatEquation2D::new(d, SpectralProfile::PaperLiteral, 1.0, 0.0)?;
    let x0 = sample_grf(d, 4.0, GrfSpectrum::PowerLaw, &mut rng::stream(1, Domain::Misc, 0))?;
    let steps = 32;
    let dt = 0.2 / steps as f64;
    let mut x = x0.clone();
    let mut next = vec![0.0; d * d];
    for _ in 0..steps {
        spec.advance(&x, dt, &mut next);
        std::mem::swap(&mut x, &mut next);
    }
    let rms = |v: &[f64]| (v.iter().map(|a| a * a).sum::<f64>() / v.len() as f64).sqrt();
    println!("rms |x0| {:.4}, rms |x(T)| {:.4}", rms(&x0), rms(&x));
    for _ in 0..steps {
        spec.reverse_advance(&x, dt, &mut next)?;
        std::mem::swap(&mut x, &mut next);
    }
    let err = x.iter().zip(&x0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("max |x0 - reverse(forward(x0))| = {err:.2e}");
    Ok(())
}
