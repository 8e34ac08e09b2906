//! Denoising score matching on static N(0, 1) data: the learned score
//! approaches -x / (1 + sigma^2).

use smdp::physics::AffineDrift1D;
use smdp::rng;
use smdp::score::{MlpScore, ScoreField};
use smdp::sde::{generate_dataset, TimeGrid};
use smdp::training::{run_training, LossKind, Phase, TrainPlan};
use smdp::Tensor;

fn main() -> smdp::Result<()> {
    let spec = AffineDrift1D::new(0.0, 0.0);
    let grid = TimeGrid::new(0.0, 0.5, 2)?;
    let sampler = |g: &mut rng::Rng, out: &mut [f64]| rng::fill_normal(g, out);
    let (data, _) = generate_dataset(&spec, &sampler, 4000, &grid, 2)?;
    let sigma = 0.5;
    let plan = TrainPlan {
        loss: LossKind::Dsm,
        noise_scale: Some(sigma),
        seed: 2,
        phases: vec![Phase { epochs: 150, lr: 1e-3, batch: 256, ..Phase::default() }],
        ..TrainPlan::default()
    };
    let mut model = MlpScore::new(1, 2)?;
    let h = run_training(&plan, &mut model, &spec, &data)?;
    println!("final loss {:.4e} after {} steps", h.final_loss().unwrap_or(f64::NAN), h.steps);
    let xs = [-1.0, -0.5, 0.0, 0.5, 1.0];
    let s = model.eval(&Tensor::new(&[5, 1], xs.to_vec())?, &[0.0; 5])?;
    for (x, v) in xs.iter().zip(s.data()) {
        println!("x {x:+.1}: learned {v:+.4}, optimum {:+.4}", -x / (1.0 + sigma * sigma));
    }
    Ok(())
}
