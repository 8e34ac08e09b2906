//! Measures the strong convergence order of Euler-Maruyama on an
//! Ornstein-Uhlenbeck process against a fine-grid reference.

use smdp::sde::{fit_slope, strong_errors, StrongOrderSetup};

fn main() -> smdp::Result<()> {
    let setup = StrongOrderSetup { paths: 2000, ..StrongOrderSetup::default() };
    let dts = [0.1, 0.05, 0.025, 0.0125];
    let errs = strong_errors(&setup, &dts)?;
    for (dt, e) in dts.iter().zip(&errs) {
        println!("dt {dt:<7} sup-norm error {e:.4e}");
    }
    let logs = |v: &[f64]| v.iter().map(|x| x.ln()).collect::<Vec<_>>();
    println!("fitted order {:.3}", fit_slope(&logs(&dts), &logs(&errs)));
    Ok(())
}
