use gsr_core::numerics::{
    check_gradients, elu, layer_norm, matmul, softmax_rows, GradCheckReport, NumericsError, Tape, Tensor, Var,
};
use gsr_core::SeededRng;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

fn t(rows: &[&[f32]]) -> Tensor {
    Tensor::from_rows(rows).unwrap()
}

fn random(shape: &[usize], rng: &mut SeededRng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-2.0..2.0))
}

/// Finite-difference check of `sum_squares(build(inputs) + offset)`.
fn gradcheck<F>(inputs: Vec<Tensor<f64>>, seed: u64, build: F) -> GradCheckReport
where
    F: Fn(&mut Tape<'_, f64>, &[Var]) -> Var,
{
    let mut rng = SeededRng::seed_from_u64(seed);
    let offset = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().enumerate().map(|(i, x)| tape.param(i, x)).collect();
        let out = build(&mut tape, &vars);
        random(tape.value(out).shape(), &mut rng)
    };
    let loss_of = |xs: &[Tensor<f64>]| -> (f64, Vec<Tensor<f64>>) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().enumerate().map(|(i, x)| tape.param(i, x)).collect();
        let out = build(&mut tape, &vars);
        let c = tape.constant(offset.clone());
        let shifted = tape.add(out, c).unwrap();
        let loss = tape.sum_squares(shifted, 0);
        let value = tape.value(loss).data()[0];
        let grads = tape.backward(loss).unwrap();
        let g = (0..xs.len()).map(|i| grads.get(i).cloned().unwrap()).collect();
        (value, g)
    };
    let (_, analytic) = loss_of(&inputs);
    check_gradients(&inputs, &analytic, 1e-3, 1e-6, |xs| loss_of(xs).0)
}

#[test]
fn elu_examples() {
    let out = elu(&Tensor::new(vec![3], vec![0.0f64, 2.0, -1.0]).unwrap());
    assert_eq!(out.data()[0], 0.0);
    assert_eq!(out.data()[1], 2.0);
    assert!((out.data()[2] - (-0.632_120_558_828_557_7)).abs() < 1e-12);
}

#[test]
fn softmax_examples() {
    let c = 0.37f64;
    let m = Tensor::from_rows(&[&[c, c, c]]).unwrap();
    let s = softmax_rows(&m, &[true; 3]).unwrap();
    for &v in s.data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-12);
    }
    let m = Tensor::from_rows(&[&[0.0f64, std::f64::consts::LN_2]]).unwrap();
    let s = softmax_rows(&m, &[true, true]).unwrap();
    assert!((s.data()[0] - 1.0 / 3.0).abs() < 1e-12 && (s.data()[1] - 2.0 / 3.0).abs() < 1e-12);
    let s = softmax_rows(&t(&[&[5.0, 9.0]]), &[true, false]).unwrap();
    assert_eq!(s.data(), &[1.0, 0.0]);
    let s = softmax_rows(&t(&[&[5.0, 9.0]]), &[false, false]).unwrap();
    assert_eq!(s.data(), &[0.0, 0.0]);
    assert!(matches!(softmax_rows(&t(&[&[1.0, 2.0]]), &[true]), Err(NumericsError::ShapeMismatch { .. })));
}

#[test]
fn matmul_examples() {
    let a = t(&[&[1.0, 2.0], &[3.0, 4.0]]);
    assert_eq!(matmul(&a, &Tensor::identity(2)).unwrap(), a);
    assert_eq!(matmul(&a, &t(&[&[5.0], &[6.0]])).unwrap(), t(&[&[17.0], &[39.0]]));
    assert_eq!(matmul(&a, &Tensor::zeros(&[2, 3])).unwrap(), Tensor::zeros(&[2, 3]));
    assert!(matches!(matmul(&a, &Tensor::zeros(&[3, 1])), Err(NumericsError::ShapeMismatch { .. })));
}

#[test]
fn layer_norm_examples() {
    let ones = Tensor::filled(&[2], 1.0f64);
    let zeros = Tensor::zeros(&[2]);
    let (out, _) = layer_norm(&Tensor::from_rows(&[&[4.0, 4.0]]).unwrap(), &ones, &zeros, 1e-8).unwrap();
    assert_eq!(out.data(), &[0.0, 0.0]);
    let (out, _) = layer_norm(&Tensor::from_rows(&[&[1.0, 3.0]]).unwrap(), &ones, &zeros, 1e-12).unwrap();
    assert!((out.data()[0] + 1.0).abs() < 1e-9 && (out.data()[1] - 1.0).abs() < 1e-9);
    let b = Tensor::new(vec![2], vec![0.25, -3.0]).unwrap();
    let (out, _) = layer_norm(&Tensor::from_rows(&[&[7.0, -2.0]]).unwrap(), &zeros, &b, 1e-8).unwrap();
    assert_eq!(out.data(), b.data());
    assert!(layer_norm(&Tensor::from_rows(&[&[1.0, 3.0]]).unwrap(), &Tensor::zeros(&[3]), &zeros, 1e-8).is_err());
}

#[test]
fn backward_of_linear_and_quadratic() {
    let w = Tensor::from_fn(&[3, 2], |i| i as f64 - 2.5);
    let mut tape = Tape::new();
    let v = tape.param(0, &w);
    // sum(W) = sum_squares of nothing is not available; use W·1 then ones·(W·1)
    let ones_col = tape.constant(Tensor::filled(&[2, 1], 1.0));
    let ones_row = tape.constant(Tensor::filled(&[1, 3], 1.0));
    let col = tape.matmul(v, ones_col).unwrap();
    let total = tape.matmul(ones_row, col).unwrap();
    let g = tape.backward(total).unwrap();
    assert_eq!(g.get(0).unwrap(), &Tensor::filled(&[3, 2], 1.0));

    let mut tape = Tape::new();
    let v = tape.param(0, &w);
    let loss = tape.sum_squares(v, 0);
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.get(0).unwrap(), &w.map(|x| 2.0 * x));
}

#[test]
fn backward_twice_is_an_error_and_unused_params_get_zero() {
    let a = Tensor::filled(&[2, 2], 1.0f64);
    let b = Tensor::filled(&[3], 4.0f64);
    let mut tape = Tape::new();
    let va = tape.param(0, &a);
    let _vb = tape.param(1, &b);
    let loss = tape.sum_squares(va, 0);
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.get(1).unwrap(), &Tensor::zeros(&[3]));
    assert_eq!(tape.backward(loss).unwrap_err(), NumericsError::TapeConsumed);

    let mut tape = Tape::new();
    let va = tape.param(0, &a);
    assert!(matches!(tape.backward(va), Err(NumericsError::NotScalar(_))));
}

#[test]
fn per_op_gradients_match_finite_differences() {
    let mut rng = SeededRng::seed_from_u64(42);
    let tol = 1e-3;
    let mut reports = Vec::new();

    let (a, b) = (random(&[4, 3], &mut rng), random(&[3, 5], &mut rng));
    reports.push(("matmul", gradcheck(vec![a, b], 1, |tp, v| tp.matmul(v[0], v[1]).unwrap())));

    let x = random(&[6, 4], &mut rng);
    reports.push(("elu", gradcheck(vec![x.clone()], 2, |tp, v| tp.elu(v[0]))));
    reports.push(("elu_plus_one", gradcheck(vec![x.clone()], 11, |tp, v| tp.elu_plus_one(v[0]))));

    let (g, b) = (random(&[4], &mut rng), random(&[4], &mut rng));
    reports.push((
        "layer_norm",
        gradcheck(vec![x.clone(), g, b], 3, |tp, v| tp.layer_norm(v[0], v[1], v[2], 1e-8).unwrap()),
    ));

    let bias = random(&[4], &mut rng);
    reports.push(("add_bias", gradcheck(vec![x.clone(), bias], 4, |tp, v| tp.add_bias(v[0], v[1]).unwrap())));

    let pos = random(&[5, 4], &mut rng);
    reports.push((
        "add_positional",
        gradcheck(vec![x.clone(), pos], 5, |tp, v| tp.add_positional(v[0], v[1], 2, 3).unwrap()),
    ));

    let table = random(&[5, 4], &mut rng);
    reports.push(("gather_rows", gradcheck(vec![table], 6, |tp, v| tp.gather_rows(v[0], &[3, 0, 3, 1]).unwrap())));

    let (q, k, vv) = (random(&[6, 4], &mut rng), random(&[6, 4], &mut rng), random(&[6, 4], &mut rng));
    let valid = [false, true, true, true, false, true];
    reports.push((
        "attention",
        gradcheck(vec![q, k, vv], 7, move |tp, v| tp.attention(v[0], v[1], v[2], 3, &valid).unwrap()),
    ));

    let pos_cov = |rng: &mut SeededRng| Tensor::from_fn(&[3, 4], |_| rng.random_range(0.2..3.0));
    let (ma, ca, mb, cb) = (random(&[3, 4], &mut rng), pos_cov(&mut rng), random(&[3, 4], &mut rng), pos_cov(&mut rng));
    reports.push((
        "wasserstein_rows",
        gradcheck(vec![ma, ca, mb, cb], 8, |tp, v| tp.wasserstein_rows(v[0], v[1], v[2], v[3]).unwrap()),
    ));

    let (p, n) = (random(&[5], &mut rng), random(&[5], &mut rng));
    let mask = [true, false, true, true, false];
    reports.push(("bpr_mean", gradcheck(vec![p, n], 9, move |tp, v| tp.bpr_mean(v[0], v[1], &mask).unwrap())));

    let w = random(&[4, 3], &mut rng);
    reports.push(("sum_squares", gradcheck(vec![w], 10, |tp, v| tp.sum_squares(v[0], 1))));

    for (name, r) in &reports {
        assert!(r.max_rel_error < tol, "{name}: {r:?}");
    }
}

proptest! {
    #[test]
    fn elu_is_bounded_below(x in -30.0f64..1e3, far in -1e30f64..-30.0) {
        prop_assert!(elu(&Tensor::scalar(x)).data()[0] > -1.0);
        // exp(x) - 1 rounds to -1 once exp(x) drops below half an ulp of 1
        prop_assert!(elu(&Tensor::scalar(far)).data()[0] >= -1.0);
    }

    #[test]
    fn softmax_rows_sum_to_one(
        vals in proptest::collection::vec(-20.0f32..20.0, 12),
        mask in proptest::collection::vec(any::<bool>(), 12),
    ) {
        let m = Tensor::new(vec![3, 4], vals).unwrap();
        let s = softmax_rows(&m, &mask).unwrap();
        for r in 0..3 {
            let allowed = &mask[r * 4..r * 4 + 4];
            let row = s.row(r);
            let sum: f64 = row.iter().map(|&v| v as f64).sum();
            if allowed.iter().any(|&a| a) {
                prop_assert!((sum - 1.0).abs() < 1e-6);
            } else {
                prop_assert_eq!(sum, 0.0);
            }
            for (v, a) in row.iter().zip(allowed) {
                if !a { prop_assert_eq!(*v, 0.0); }
            }
        }
    }

    #[test]
    fn matmul_associative_with_identity(seed in any::<u64>()) {
        let mut rng = SeededRng::seed_from_u64(seed);
        let mut r = || Tensor::<f32>::from_fn(&[8, 8], |_| rng.random_range(-2.0..2.0));
        let (a, b) = (r(), r());
        let i = Tensor::identity(8);
        let left = matmul(&matmul(&a, &i).unwrap(), &b).unwrap();
        let right = matmul(&a, &matmul(&i, &b).unwrap()).unwrap();
        for (x, y) in left.data().iter().zip(right.data()) {
            prop_assert!((x - y).abs() < 1e-5);
        }
    }
}
