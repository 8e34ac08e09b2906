use super::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
}

/// Checks `d/dx Σ c ⊙ f(x)` against central differences.
fn check_unary(f: impl Fn(Var<'_>) -> Var<'_>, x: &Tensor, weights: &Tensor) -> f64 {
    let tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let c = tape.constant(weights.clone());
    let loss = f(xv).mul(c).unwrap().sum();
    let analytic = tape.backward(loss).unwrap().wrt(xv).unwrap().clone();
    let numeric = finite_difference_gradient(
        |probe| {
            let t = Tape::new();
            let v = t.constant(probe.clone());
            let c = t.constant(weights.clone());
            Ok(t.value(f(v).mul(c)?.sum()).item()?)
        },
        x,
        1e-5,
    )
    .unwrap();
    relative_error(analytic.data(), numeric.data())
}

#[test]
fn elementwise_add() {
    let tape = Tape::new();
    let a = tape.constant(Tensor::vector(vec![1.0, 2.0]));
    let b = tape.constant(Tensor::vector(vec![3.0, 4.0]));
    assert_eq!(a.add(b).unwrap().value().data(), &[4.0, 6.0]);
}

#[test]
fn identity_matmul() {
    let tape = Tape::new();
    let i = tape.constant(Tensor::identity(3));
    let v = tape.constant(Tensor::matrix(3, 1, vec![0.5, -1.0, 2.0]).unwrap());
    assert_eq!(i.matmul(v).unwrap().value().data(), &[0.5, -1.0, 2.0]);
}

#[test]
fn elu_at_minus_one() {
    let tape = Tape::new();
    let x = tape.constant(Tensor::scalar(-1.0));
    let y = x.elu().value().item().unwrap();
    assert!((y - ((-1.0f64).exp() - 1.0)).abs() < 1e-15);
    assert!((y + 0.6321).abs() < 1e-4);
}

#[test]
fn square_gradient() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(3.0));
    let y = x.square().sum();
    assert_eq!(tape.backward(y).unwrap().wrt(x).unwrap().data(), &[6.0]);
}

#[test]
fn fan_out_is_summed() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(1.5));
    let y = x.mul(x).unwrap().sum();
    assert_eq!(tape.backward(y).unwrap().wrt(x).unwrap().data(), &[3.0]);
}

#[test]
fn sum_elu_of_linear_map_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let w = random(&[4, 3], &mut rng);
    let x = random(&[3, 2], &mut rng);
    let tape = Tape::new();
    let wv = tape.constant(w.clone());
    let xv = tape.leaf(x.clone());
    let loss = wv.matmul(xv).unwrap().elu().sum();
    let analytic = tape.backward(loss).unwrap().wrt(xv).unwrap().clone();
    let numeric = finite_difference_gradient(
        |p| {
            let t = Tape::new();
            let out = t.constant(w.clone()).matmul(t.constant(p.clone()))?.elu().sum();
            t.value(out).item()
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(relative_error(analytic.data(), numeric.data()) < 1e-6);
}

#[test]
fn backward_rejects_foreign_and_non_scalar_outputs() {
    let tape = Tape::new();
    let other = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
    let y = other.leaf(Tensor::scalar(1.0)).sum();
    assert!(matches!(tape.backward(y), Err(Error::NotOnTape { .. })));
    assert!(matches!(
        tape.backward(x.square()),
        Err(Error::NonScalarOutput { .. })
    ));
}

#[test]
fn shape_mismatch_reports_both_shapes() {
    let tape = Tape::new();
    let a = tape.leaf(Tensor::zeros(&[2, 3]));
    let b = tape.leaf(Tensor::zeros(&[3, 2]));
    match a.add(b) {
        Err(Error::ShapeMismatch { lhs, rhs, .. }) => {
            assert_eq!(lhs, vec![2, 3]);
            assert_eq!(rhs, vec![3, 2]);
        }
        other => panic!("expected shape mismatch, got {other:?}"),
    }
}

#[test]
fn unreached_leaves_get_zero_gradient() {
    let tape = Tape::new();
    let a = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
    let b = tape.leaf(Tensor::vector(vec![5.0]));
    let g = tape.backward(a.square().sum()).unwrap();
    assert_eq!(g.wrt(b).unwrap().data(), &[0.0]);
    assert_eq!(g.len(), 2);
}

#[test]
fn sign_and_abs_have_zero_gradient_at_zero() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![0.0, 0.0]));
    let y = x.sign().add(x.abs()).unwrap().sum();
    assert_eq!(tape.backward(y).unwrap().wrt(x).unwrap().data(), &[0.0, 0.0]);
}

#[test]
fn unary_primitives_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..100 {
        let x = random(&[3, 4], &mut rng);
        let c = random(&[3, 4], &mut rng);
        let checks: Vec<(&str, f64)> = vec![
            ("elu", check_unary(|v| v.elu(), &x, &c)),
            ("elu_deriv", check_unary(|v| v.elu_deriv(), &x, &c)),
            ("tanh", check_unary(|v| v.tanh(), &x, &c)),
            ("leaky_relu", check_unary(|v| v.leaky_relu(0.2), &x, &c)),
            ("abs", check_unary(|v| v.abs(), &x, &c)),
            ("square", check_unary(|v| v.square(), &x, &c)),
            ("exp", check_unary(|v| v.exp(), &x, &c)),
            ("neg", check_unary(|v| v.neg(), &x, &c)),
            ("scale", check_unary(|v| v.scale(-1.7), &x, &c)),
            ("add_scalar", check_unary(|v| v.add_scalar(0.3).square(), &x, &c)),
            ("center_rows", check_unary(|v| v.center_rows().square(), &x, &c)),
            (
                "scale_rows",
                check_unary(|v| v.scale_rows(&[0.5, -2.0, 3.0]).unwrap(), &x, &c),
            ),
            (
                "sign_times_square",
                check_unary(|v| v.sign().mul(v.square()).unwrap(), &x, &c),
            ),
        ];
        for (name, err) in checks {
            assert!(err < 1e-5, "case {case}: {name} rel err {err}");
        }
    }
}

#[test]
fn binary_primitives_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for case in 0..100 {
        let a = random(&[3, 4], &mut rng);
        let b = random(&[3, 4], &mut rng);
        let w = random(&[4, 2], &mut rng);
        let bias = random(&[4], &mut rng);
        let c = random(&[3, 4], &mut rng);
        let b2 = b.clone();
        let w2 = w.clone();
        let bias2 = bias.clone();
        let errs = [
            check_unary(|v| v.add(v.tape().constant(b2.clone())).unwrap().square(), &a, &c),
            check_unary(|v| v.tape().constant(b2.clone()).sub(v).unwrap().square(), &a, &c),
            check_unary(|v| v.mul(v.tape().constant(b2.clone())).unwrap(), &a, &c),
            check_unary(
                |v| v.add_bias(v.tape().constant(bias2.clone())).unwrap().elu(),
                &a,
                &c,
            ),
            check_unary(
                |v| {
                    let m = v.matmul(v.tape().constant(w2.clone())).unwrap();
                    m.concat_cols(m).unwrap().tanh()
                },
                &a,
                &random(&[3, 4], &mut rng),
            ),
            check_unary(|v| v.reshape(&[4, 3]).unwrap().square().reshape(&[3, 4]).unwrap(), &a, &c),
        ];
        for (i, err) in errs.iter().enumerate() {
            assert!(*err < 1e-5, "case {case}: binary check {i} rel err {err}");
        }
        // gradient w.r.t. the second operand of matmul and the bias
        let tape = Tape::new();
        let av = tape.constant(a.clone());
        let wv = tape.leaf(w.clone());
        let bv = tape.leaf(Tensor::vector(vec![0.1, -0.2]));
        let loss = av.matmul(wv).unwrap().add_bias(bv).unwrap().elu().sum();
        let g = tape.backward(loss).unwrap();
        let numeric = finite_difference_gradient(
            |p| {
                let t = Tape::new();
                let out = t
                    .constant(a.clone())
                    .matmul(t.constant(p.clone()))?
                    .add_bias(t.constant(Tensor::vector(vec![0.1, -0.2])))?
                    .elu()
                    .sum();
                t.value(out).item()
            },
            &w,
            1e-5,
        )
        .unwrap();
        assert!(relative_error(g.wrt(wv).unwrap().data(), numeric.data()) < 1e-5);
    }
}

#[test]
fn conv_primitives_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let geom = ConvGeometry { batch: 2, c_in: 2, c_out: 3, h: 5, w: 4, k: 4 };
    for case in 0..100 {
        let x = random(&[2, 2, 5, 4], &mut rng);
        let w = random(&[3, 2, 4, 4], &mut rng);
        let b = random(&[3], &mut rng);
        let c = random(&[2, 3, 5, 4], &mut rng);
        let (w1, b1) = (w.clone(), b.clone());
        let err_x = check_unary(
            |v| {
                let t = v.tape();
                v.conv2d(t.constant(w1.clone()), Some(t.constant(b1.clone())), geom)
                    .unwrap()
                    .leaky_relu(0.2)
            },
            &x,
            &c,
        );
        assert!(err_x < 1e-5, "case {case}: conv input grad {err_x}");
        let x1 = x.clone();
        let err_w = check_unary(
            |v| {
                let t = v.tape();
                t.constant(x1.clone()).conv2d(v, None, geom).unwrap().reshape(&[1, 120]).unwrap()
            },
            &w,
            &c.reshape(&[1, 120]).unwrap(),
        );
        assert!(err_w < 1e-5, "case {case}: conv weight grad {err_w}");
        let ct = random(&[2, 2, 5, 4], &mut rng);
        let y = random(&[2, 3, 5, 4], &mut rng);
        let w2 = w.clone();
        let err_t = check_unary(
            |v| {
                let t = v.tape();
                v.conv_transpose2d(t.constant(w2.clone()), None, geom).unwrap().tanh()
            },
            &y,
            &ct,
        );
        assert!(err_t < 1e-5, "case {case}: transposed conv input grad {err_t}");
        let y1 = y.clone();
        let err_tw = check_unary(
            |v| {
                let t = v.tape();
                t.constant(y1.clone()).conv_transpose2d(v, None, geom).unwrap().reshape(&[1, 80]).unwrap()
            },
            &w,
            &ct.reshape(&[1, 80]).unwrap(),
        );
        assert!(err_tw < 1e-5, "case {case}: transposed conv weight grad {err_tw}");
    }
}

#[test]
fn conv_bias_gradient() {
    let geom = ConvGeometry { batch: 1, c_in: 1, c_out: 2, h: 3, w: 3, k: 3 };
    let tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[1, 1, 3, 3]));
    let w = tape.constant(Tensor::zeros(&[2, 1, 3, 3]));
    let b = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
    let loss = x.conv2d(w, Some(b), geom).unwrap().sum();
    assert_eq!(tape.backward(loss).unwrap().wrt(b).unwrap().data(), &[9.0, 9.0]);
}

#[test]
fn interp_gradients() {
    let table = Tensor::vector(vec![1.0, 2.0, 4.0, 8.0]);
    let queries = vec![InterpQuery {
        idx: [0, 1, 2, 3],
        w: [0.1, 0.2, 0.3, 0.4],
        dx: [-1.0, 1.0, 0.0, 0.0],
    }];
    let tape = Tape::new();
    let tv = tape.leaf(table);
    let x = tape.leaf(Tensor::vector(vec![0.25]));
    let y = tv.interp(x, queries).unwrap();
    assert!((y.value().data()[0] - (0.1 + 0.4 + 1.2 + 3.2)).abs() < 1e-12);
    let g = tape.backward(y.sum()).unwrap();
    assert_eq!(g.wrt(tv).unwrap().data(), &[0.1, 0.2, 0.3, 0.4]);
    assert_eq!(g.wrt(x).unwrap().data(), &[1.0]);
}

#[test]
fn reruns_are_bit_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&[5, 3], &mut rng);
    let w = random(&[3, 3], &mut rng);
    let run = || {
        let tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let wv = tape.leaf(w.clone());
        let loss = xv.matmul(wv).unwrap().elu().square().mean();
        let g = tape.backward(loss).unwrap();
        (g.wrt(xv).unwrap().clone(), g.wrt(wv).unwrap().clone())
    };
    let (a1, b1) = run();
    let (a2, b2) = run();
    assert_eq!(a1.data(), a2.data());
    assert_eq!(b1.data(), b2.data());
}

proptest! {
    #[test]
    fn backward_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0,
                          xs in proptest::collection::vec(-2.0f64..2.0, 6)) {
        let x = Tensor::new(&[2, 3], xs).unwrap();
        let grad_of = |which: u8| {
            let tape = Tape::new();
            let xv = tape.leaf(x.clone());
            let f = xv.elu().sum();
            let g = xv.square().tanh().sum();
            let out = match which {
                0 => f,
                1 => g,
                _ => f.scale(a).add(g.scale(b)).unwrap(),
            };
            tape.backward(out).unwrap().wrt(xv).unwrap().clone()
        };
        let (gf, gg, gc) = (grad_of(0), grad_of(1), grad_of(2));
        for i in 0..6 {
            let expect = a * gf.data()[i] + b * gg.data()[i];
            prop_assert!((gc.data()[i] - expect).abs() < 1e-12);
        }
    }
}
