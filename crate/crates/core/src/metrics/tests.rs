use super::*;
use crate::physics::{sample_grf, AffineDrift1D, GrfSpectrum, HeatEquation2D, SpectralProfile, SYMMETRIC_STARTS};
use crate::rng::{self, Domain};
use crate::score::{FnScore, ZeroScore};
use crate::sde::simulate;
use proptest::prelude::*;

fn brute_force_q(e: &[Option<f64>]) -> f64 {
    let n = e.len() as f64;
    let minus = e.iter().filter(|v| matches!(v, Some(x) if (x - (-1.0)).abs() / 1.0 < 0.1)).count() as f64;
    let plus = e.iter().filter(|v| matches!(v, Some(x) if (x - 1.0).abs() / 1.0 < 0.1)).count() as f64;
    2.0 * (minus / n).min(plus / n)
}

#[test]
fn q_examples() {
    let balanced: Vec<_> = (0..1000).map(|i| Some(if i < 500 { -1.0 } else { 1.0 })).collect();
    assert_eq!(posterior_metric_q(&balanced, Q_TOLERANCE).unwrap().q, 1.0);
    assert_eq!(posterior_metric_q(&vec![Some(1.0); 10], Q_TOLERANCE).unwrap().q, 0.0);
    let r = posterior_metric_q(&[Some(-1.05), Some(1.02), Some(0.5), Some(-0.99)], Q_TOLERANCE).unwrap();
    assert_eq!((r.rho_minus, r.rho_plus, r.q), (0.5, 0.25, 0.5));
    assert_eq!(r.unlabeled(), 0.25);
    assert!(posterior_metric_q(&[], Q_TOLERANCE).is_err());
}

#[test]
fn divergent_endpoints_lower_q() {
    let r = posterior_metric_q(&[Some(-1.0), Some(1.0), None, None], Q_TOLERANCE).unwrap();
    assert_eq!(r.q, 0.5);
    assert_eq!(r.n_divergent, 2);
}

proptest! {
    #[test]
    fn q_matches_brute_force_and_symmetries(v in prop::collection::vec(prop::option::weighted(0.95, -1.5f64..1.5), 1..200)) {
        let r = posterior_metric_q(&v, Q_TOLERANCE).unwrap();
        prop_assert_eq!(r.q, brute_force_q(&v));
        prop_assert!((0.0..=1.0).contains(&r.q));
        let swapped: Vec<_> = v.iter().map(|e| e.map(|x| -x)).collect();
        prop_assert_eq!(posterior_metric_q(&swapped, Q_TOLERANCE).unwrap().q, r.q);
        let mut rev = v.clone();
        rev.reverse();
        prop_assert_eq!(posterior_metric_q(&rev, Q_TOLERANCE).unwrap().q, r.q);
    }

    #[test]
    fn radial_spectrum_conserves_power(seed in 0u64..1000, d in 3usize..12) {
        let mut g = rng::stream(seed, Domain::Misc, 0);
        let mut f = vec![0.0; d * d];
        rng::fill_normal(&mut g, &mut f);
        let s = radial_spectrum(&f).unwrap();
        let energy: f64 = f.iter().map(|v| v * v).sum();
        prop_assert!((s.total_power() - energy).abs() < 1e-10 * energy);
        prop_assert_eq!(s.counts.iter().sum::<usize>(), d * d);
        prop_assert!(s.power.iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn spectral_loss_is_a_pseudometric(a in prop::collection::vec(1e-3f64..10.0, 12), b in prop::collection::vec(1e-3f64..10.0, 12), c in prop::collection::vec(1e-3f64..10.0, 12)) {
        let p = |v: &Vec<f64>| SpectrumProfile { power: v.clone(), counts: vec![1; 12] };
        let w = default_spectral_weights(12);
        let (pa, pb, pc) = (p(&a), p(&b), p(&c));
        let ab = spectral_loss(&pa, &pb, &w).unwrap();
        prop_assert_eq!(ab, spectral_loss(&pb, &pa, &w).unwrap());
        prop_assert_eq!(spectral_loss(&pa, &pa, &w).unwrap(), 0.0);
        let ac = spectral_loss(&pa, &pc, &w).unwrap();
        let cb = spectral_loss(&pc, &pb, &w).unwrap();
        prop_assert!(ab <= ac + cb + 1e-12);
    }
}

#[test]
fn constant_field_has_power_in_bin_zero() {
    let s = radial_spectrum(&vec![0.7; 64]).unwrap();
    assert!((s.power[0] - 0.49 * 64.0).abs() < 1e-12);
    assert!(s.power[1..].iter().all(|&p| p < 1e-25));
}

#[test]
fn single_mode_lands_in_its_bin() {
    let d = 32;
    let f: Vec<f64> = (0..d * d)
        .map(|p| {
            let (i, j) = (p / d, p % d);
            (2.0 * std::f64::consts::PI * (3.0 * i as f64 + 4.0 * j as f64) / d as f64).cos()
        })
        .collect();
    let s = radial_spectrum(&f).unwrap();
    let total = s.total_power();
    assert!((s.power[5] * s.counts[5] as f64 - total).abs() < 1e-9 * total);
}

#[test]
fn grf_spectrum_slope() {
    let d = 64;
    let mut acc = Vec::new();
    for n in 0..20 {
        let f = sample_grf(d, 4.0, GrfSpectrum::PowerLaw, &mut rng::stream(3, Domain::Misc, n)).unwrap();
        acc.push(radial_spectrum(&f).unwrap());
    }
    let m = SpectrumProfile::mean(&acc).unwrap();
    let xs: Vec<f64> = (2..=10).map(|k| (k as f64).ln()).collect();
    let ys: Vec<f64> = (2..=10).map(|k| m.power[k].ln()).collect();
    let slope = crate::sde::fit_slope(&xs, &ys);
    assert!((slope + 4.0).abs() < 0.3, "{slope}");
}

#[test]
fn spectral_loss_examples() {
    let s1 = SpectrumProfile { power: (1..=14).map(|k| k as f64).collect(), counts: vec![1; 14] };
    let mut s2 = s1.clone();
    for k in 0..=10 {
        s2.power[k] *= std::f64::consts::E;
    }
    let w = default_spectral_weights(14);
    assert!((spectral_loss(&s1, &s2, &w).unwrap() - 11.0).abs() < 1e-12);
    let short = SpectrumProfile { power: vec![1.0; 3], counts: vec![1; 3] };
    assert!(spectral_loss(&s1, &short, &w).is_err());
    let empty = SpectrumProfile { power: vec![0.0; 14], counts: vec![1; 14] };
    assert!(spectral_loss(&s1, &empty, &w).unwrap().is_finite());
}

#[test]
fn reconstruction_of_true_state_without_noise_is_exact() {
    let spec = HeatEquation2D::new(8, SpectralProfile::Quadratic, 1.0, 0.0).unwrap();
    let grid = TimeGrid::new(0.0, 6.25e-3, 32).unwrap();
    let x0 = sample_grf(8, 4.0, GrfSpectrum::PowerLaw, &mut rng::stream(1, Domain::Misc, 0)).unwrap();
    let traj = simulate(&spec, &x0, &grid, &mut rng::stream(1, Domain::Dataset, 0)).unwrap();
    let end = &traj[32 * 64..];
    assert!(reconstruction_mse(&x0, end, &spec, &grid).unwrap() < 1e-20);
    let zero = vec![0.0; 64];
    let ms = end.iter().map(|v| v * v).sum::<f64>() / 64.0;
    assert!((reconstruction_mse(&zero, end, &spec, &grid).unwrap() - ms).abs() < 1e-15);
}

#[test]
fn reconstruction_error_of_noisy_reference_is_noise_energy() {
    let (d, g, m) = (8usize, 0.1, 32usize);
    let spec = HeatEquation2D::new(d, SpectralProfile::Quadratic, 1.0, g).unwrap();
    let grid = TimeGrid::new(0.0, 6.25e-3, m).unwrap();
    let x0 = vec![0.0; d * d];
    let runs = 400;
    let mut mse = 0.0;
    for n in 0..runs {
        let traj = simulate(&spec, &x0, &grid, &mut rng::stream(2, Domain::Dataset, n)).unwrap();
        mse += reconstruction_mse(&x0, &traj[m * d * d..], &spec, &grid).unwrap() / runs as f64;
    }
    // Each step injects dt·g² per non-constant mode, then decays with the propagator.
    let rates = spec.solver().decay().rates();
    let mut energy = 0.0;
    for &r in &rates[1..] {
        for k in 0..m {
            energy += grid.dt * g * g * (-2.0 * r * grid.dt * k as f64).exp();
        }
    }
    let expect = energy / (d * d) as f64;
    assert!((mse - expect).abs() < 0.05 * expect, "{mse} vs {expect}");
}

#[test]
fn score_error_examples() {
    let spec = AffineDrift1D::new(0.5, 0.04);
    let analytic = |x: &[f64], t: f64, out: &mut [f64]| -> Result<()> {
        out[0] = spec.analytic_score(x[0], t, &SYMMETRIC_STARTS)?;
        Ok(())
    };
    let mut g = rng::stream(5, Domain::Evaluation, 0);
    let t: Vec<f64> = (0..500).map(|i| 0.1 + (i % 10) as f64 * 0.1).collect();
    let x = Tensor::new(&[500, 1], t.iter().map(|&ti| spec.sample_marginal(ti, &SYMMETRIC_STARTS, &mut g)).collect()).unwrap();
    let exact = FnScore::new(1, |x: &[f64], t: f64, out: &mut [f64]| {
        out[0] = 0.04f64.powi(2) * spec.analytic_score(x[0], t, &SYMMETRIC_STARTS)?;
        Ok(())
    });
    assert!(score_field_error(&exact, analytic, &spec, &x, &t).unwrap() < 1e-20);
    let zero = score_field_error(&ZeroScore { dim: 1 }, analytic, &spec, &x, &t).unwrap();
    let mut ms = 0.0;
    for r in 0..500 {
        ms += spec.analytic_score(x.row(r)[0], t[r], &SYMMETRIC_STARTS).unwrap().powi(2) / 500.0;
    }
    assert!((zero - ms).abs() < 1e-9 * ms);
    assert!(score_field_error(&ZeroScore { dim: 1 }, analytic, &spec, &x, &vec![0.0; 500]).is_err());
}

#[test]
fn mean_std_and_csv() {
    let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
    assert_eq!((m, s), (2.0, 1.0));
    let rows = vec![MetricRow::from_values("toy", "q_ode", &[0.9, 1.0])];
    let mut buf = Vec::new();
    write_metrics_csv(&rows, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("experiment,metric,value,n,std\ntoy,q_ode,0.95,2,"));
}
