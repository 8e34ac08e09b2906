//! Compares reverse-mode gradients of the MLP score with central
//! differences, for the network input and for every parameter.

use smdp::autodiff::{finite_difference_gradient, relative_error, Tape};
use smdp::score::{MlpScore, ScoreModel};
use smdp::Tensor;

fn main() -> smdp::Result<()> {
    let model = MlpScore::new(2, 3)?;
    let x = Tensor::new(&[3, 2], vec![0.3, -0.7, 1.1, 0.2, -0.4, -1.5])?;
    let t = [0.5, 2.0, 7.5];

    let tape = Tape::new();
    let theta = model.params().bind(&tape, true);
    let xv = tape.leaf(x.clone());
    let loss = model.forward(&theta, xv, &t)?.square().sum();
    let grads = tape.backward(loss)?;
    let dx = grads.wrt(xv)?.clone();
    let dtheta = model.params().gather(&grads, &theta)?;

    let value = |m: &MlpScore, x: &Tensor| -> smdp::Result<f64> {
        let tape = Tape::new();
        let th = m.params().bind(&tape, false);
        let v = m.forward(&th, tape.constant(x.clone()), &t)?.square().sum();
        tape.value(v).item()
    };
    let fd_x = finite_difference_gradient(|p| value(&model, p), &x, 1e-5)?;
    let flat = Tensor::vector(model.params().as_slice().to_vec());
    let fd_theta = finite_difference_gradient(
        |p| {
            let mut m = model.clone();
            m.params_mut().as_mut_slice().copy_from_slice(p.data());
            value(&m, &x)
        },
        &flat,
        1e-6,
    )?;
    println!("input gradient relative error     {:.2e}", relative_error(dx.data(), fd_x.data()));
    println!("parameter gradient relative error {:.2e} over {} parameters", relative_error(&dtheta, fd_theta.data()), dtheta.len());
    Ok(())
}
