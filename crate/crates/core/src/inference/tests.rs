use super::*;
use crate::physics::{AffineDrift1D, QuadraticDrift1D};
use crate::score::{FnScore, ZeroScore};

fn cfg(mode: InferenceMode, steps: usize) -> InferenceConfig {
    InferenceConfig { mode, grid: TimeGrid::new(0.0, 0.01, steps).unwrap(), seed: 4, ..InferenceConfig::default() }
}

#[test]
fn zero_score_ode_is_reverse_euler() {
    let spec = AffineDrift1D::new(0.5, 0.04);
    let c = cfg(InferenceMode::Ode, 100);
    let r = solve_inverse(&ZeroScore { dim: 1 }, &spec, &[0.3], &c).unwrap();
    let mut x = 0.3f64;
    for k in 0..100 {
        let (_, dt) = c.step_times(k);
        x += dt * 0.5 * x;
        assert!((r.trajectory.row(k + 1)[0] - x).abs() < 1e-14);
    }
    assert_eq!(r.trajectory.rows(), 101);
    assert!(!r.is_divergent());
}

#[test]
fn last_step_lands_on_t0() {
    let c = InferenceConfig { grid: TimeGrid::new(0.1, 0.03, 7).unwrap(), ..InferenceConfig::default() };
    let (t, dt) = c.step_times(6);
    assert_eq!(t - dt, 0.1);
    assert_eq!(c.step_times(0).0, c.grid.end());
}

#[test]
fn sde_without_noise_and_unit_correction_is_ode() {
    let spec = QuadraticDrift1D::default();
    let score = FnScore::new(1, |x: &[f64], t: f64, out: &mut [f64]| {
        out[0] = -x[0] * (1.0 + t);
        Ok(())
    });
    let ode = solve_inverse(&score, &spec, &[0.2], &cfg(InferenceMode::Ode, 50)).unwrap();
    let sde = InferenceConfig { c: Some(1.0), g_infer: Some(0.0), ..cfg(InferenceMode::Sde, 50) };
    let b = solve_inverse(&score, &spec, &[0.2], &sde).unwrap();
    assert_eq!(ode.trajectory, b.trajectory);
}

#[test]
fn default_correction_by_mode() {
    assert_eq!(cfg(InferenceMode::Sde, 1).correction(), 2.0);
    assert_eq!(cfg(InferenceMode::Ode, 1).correction(), 1.0);
    assert_eq!(cfg(InferenceMode::Separated, 1).correction(), 1.0);
}

#[test]
fn separated_step_with_zero_score_adds_scaled_noise() {
    let spec = AffineDrift1D::new(0.5, 0.04);
    let c = cfg(InferenceMode::Separated, 1);
    let r = solve_inverse(&ZeroScore { dim: 1 }, &spec, &[0.3], &c).unwrap();
    let mut rng = rng::stream(4, Domain::Inference, 0);
    let z = rng::normal(&mut rng);
    let expect = 0.3 * (1.0 + 0.5 * 0.01) + 0.1 * 0.04 * z;
    assert!((r.endpoint()[0] - expect).abs() < 1e-15);
}

#[test]
fn rows_do_not_depend_on_batch() {
    let spec = QuadraticDrift1D::default();
    let c = cfg(InferenceMode::Sde, 30);
    let x = Tensor::new(&[3, 1], vec![0.1, -0.2, 0.05]).unwrap();
    let batch = solve_batch(&ZeroScore { dim: 1 }, &spec, &x, &c).unwrap();
    let first = solve_inverse(&ZeroScore { dim: 1 }, &spec, &[0.1], &c).unwrap();
    assert_eq!(batch[0], first);
    let post = posterior_sample(&ZeroScore { dim: 1 }, &spec, &[0.1], &c, 4).unwrap();
    assert_eq!(post[0], first);
    assert_ne!(post[1].endpoint(), post[0].endpoint());
    assert!(posterior_sample(&ZeroScore { dim: 1 }, &spec, &[0.1], &cfg(InferenceMode::Ode, 3), 2).is_err());
}

#[test]
fn divergent_rows_are_frozen_and_flagged() {
    let spec = QuadraticDrift1D { lambda1: 7.0, lambda2: 0.0 };
    let c = InferenceConfig { grid: TimeGrid::new(0.0, 0.1, 40).unwrap(), ..InferenceConfig::default() };
    let x = Tensor::new(&[2, 1], vec![5.0, 0.01]).unwrap();
    let rs = solve_batch(&ZeroScore { dim: 1 }, &spec, &x, &c).unwrap();
    let k = rs[0].diverged_at.expect("large start diverges");
    assert!(rs[0].trajectory.all_finite());
    assert_eq!(rs[0].trajectory.row(k + 1), rs[0].trajectory.row(40));
    assert!(rs[0].diagnostics.last().unwrap().divergent);
    assert_eq!(rs[0].diagnostics.len(), k + 1);
    assert!(!rs[1].is_divergent());
    assert_eq!(rs[1].diagnostics.len(), 40);
}

#[test]
fn langevin_matches_discrete_stationary_variance() {
    let eps = 0.05;
    let score = FnScore::new(1, |x: &[f64], _t: f64, out: &mut [f64]| {
        out[0] = -x[0];
        Ok(())
    });
    let x = Tensor::zeros(&[4000, 1]);
    let (out, bad) = langevin_refine(&score, &x, 0.0, eps, 300, 9).unwrap();
    assert!(bad.iter().all(|b| !b));
    // x' = (1−ε)x + sqrt(2ε)z has stationary variance 2/(2−ε).
    let expect = 2.0 / (2.0 - eps);
    let var = out.sum_squares() / 4000.0;
    assert!((var - expect).abs() < 0.07 * expect, "{var} vs {expect}");
}

#[test]
fn langevin_with_zero_score_is_brownian() {
    let (out, _) = langevin_refine(&ZeroScore { dim: 2 }, &Tensor::zeros(&[3000, 2]), 1.0, 1e-3, 50, 2).unwrap();
    let var = out.sum_squares() / 6000.0;
    assert!((var - 0.1).abs() < 0.01, "{var}");
}

#[test]
fn diagnostics_csv() {
    let spec = AffineDrift1D::default();
    let r = solve_inverse(&ZeroScore { dim: 1 }, &spec, &[1.0], &cfg(InferenceMode::Ode, 2)).unwrap();
    let mut buf = Vec::new();
    r.write_diagnostics(&mut buf).unwrap();
    let s = String::from_utf8(buf).unwrap();
    assert_eq!(s.lines().count(), 3);
    assert!(s.starts_with("step,x_norm,s_norm,flag\n0,"));
}

#[test]
fn export_round_trips_forward_in_time() {
    let spec = AffineDrift1D::default();
    let c = cfg(InferenceMode::Ode, 5);
    let rs = solve_batch(&ZeroScore { dim: 1 }, &spec, &Tensor::new(&[2, 1], vec![0.5, -0.5]).unwrap(), &c).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("inferred.bin");
    export_results(&rs, &spec, &c, &p).unwrap();
    let set = TrajectorySet::load(&p).unwrap();
    assert_eq!(set.len(), 2);
    assert_eq!(set.state(1, 5), &[-0.5]);
    assert_eq!(set.state(0, 0), rs[0].endpoint());
}

#[test]
fn parallel_eval_matches_serial() {
    let score = FnScore::new(2, |x: &[f64], t: f64, out: &mut [f64]| {
        out[0] = x[1] * t;
        out[1] = -x[0];
        Ok(())
    });
    let x = Tensor::new(&[150, 2], (0..300).map(|i| i as f64 * 0.01).collect()).unwrap();
    let t: Vec<f64> = (0..150).map(|i| i as f64).collect();
    assert_eq!(eval_parallel(&score, &x, &t).unwrap(), score.eval(&x, &t).unwrap());
}
