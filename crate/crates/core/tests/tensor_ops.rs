use proptest::prelude::*;
use upada_core::tensor::{softmax_rows, Optimizer, OptimizerSettings, ParamSet, Tape, Tensor, Var};
use upada_core::Error;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn one_param(t: Tensor) -> (ParamSet, upada_core::tensor::ParamId) {
    let mut ps = ParamSet::new();
    let id = ps.insert("x", t).unwrap();
    (ps, id)
}

#[test]
fn matmul_example() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap());
    let b = tape.constant(Tensor::from_rows(&[&[5.0, 6.0], &[7.0, 8.0]]).unwrap());
    let c = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(c).data(), &[19.0, 22.0, 43.0, 50.0]);
}

#[test]
fn matmul_shape_mismatch() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2, 3]));
    assert!(matches!(tape.matmul(a, b), Err(Error::Dimension { .. })));
}

#[test]
fn activations() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::from_rows(&[&[-1.0, 0.0, 0.5]]).unwrap());
    let r = tape.relu(x);
    let s = tape.sigmoid(x);
    let t = tape.tanh(x);
    assert_eq!(tape.value(r).data(), &[0.0, 0.0, 0.5]);
    assert!(close(tape.value(s).data()[1], 0.5, 1e-15));
    assert!(close(tape.value(t).data()[2], 0.462_117_157_260_009_8, 1e-12));
}

#[test]
fn softmax_cross_entropy_example() {
    let mut tape = Tape::new();
    let z = tape.constant(Tensor::from_rows(&[&[1.0, 2.0, 3.0]]).unwrap());
    let l = tape.softmax_cross_entropy(z, &[2]).unwrap();
    assert!(close(tape.scalar(l), 0.407_605_964_444_380_1, 1e-12));
}

#[test]
fn softmax_cross_entropy_rejects_bad_labels() {
    let mut tape = Tape::new();
    let z = tape.constant(Tensor::zeros(&[1, 3]));
    assert!(matches!(tape.softmax_cross_entropy(z, &[3]), Err(Error::Label { .. })));
    let e = tape.constant(Tensor::zeros(&[0, 3]));
    assert!(tape.softmax_cross_entropy(e, &[]).is_err());
}

#[test]
fn bce_example() {
    let mut tape = Tape::new();
    let z = tape.constant(Tensor::from_rows(&[&[1.5]]).unwrap());
    let l = tape.binary_cross_entropy(z, &[0.0]).unwrap();
    assert!(close(tape.scalar(l), 1.701_413_277_982_752_4, 1e-12));
}

#[test]
fn bce_is_stable_for_large_logits() {
    let mut tape = Tape::new();
    let z = tape.constant(Tensor::from_rows(&[&[800.0], &[-800.0]]).unwrap());
    let l = tape.binary_cross_entropy(z, &[1.0, 0.0]).unwrap();
    assert!(tape.scalar(l).is_finite());
    assert!(tape.scalar(l) < 1e-300);
}

#[test]
fn adam_first_step_moves_by_lr() {
    let (mut ps, id) = one_param(Tensor::scalar(1.0));
    let mut tape = Tape::new();
    let x = tape.param(&ps, id);
    let y = tape.scale(x, 3.0);
    let g = tape.backward(y, &ps).unwrap();
    let mut opt = Optimizer::new(OptimizerSettings::adam(1e-3));
    opt.step(&mut ps, &g, &[id]).unwrap();
    let moved = ps.get(id).data()[0] - 1.0;
    assert!(close(moved, -0.000_999_999_996_666_667, 1e-15), "{moved}");
}

#[test]
fn sgd_step() {
    let (mut ps, id) = one_param(Tensor::scalar(1.0));
    let mut tape = Tape::new();
    let x = tape.param(&ps, id);
    let y = tape.scale(x, 2.0);
    let g = tape.backward(y, &ps).unwrap();
    let mut opt = Optimizer::new(OptimizerSettings::Sgd { lr: 0.1 });
    opt.step(&mut ps, &g, &[id]).unwrap();
    assert!(close(ps.get(id).data()[0], 0.8, 1e-15));
}

#[test]
fn backward_requires_scalar_and_finite() {
    let (ps, id) = one_param(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
    let mut tape = Tape::new();
    let x = tape.param(&ps, id);
    assert!(tape.backward(x, &ps).is_err());
    let big = tape.scale(x, f64::INFINITY);
    let s = tape.sum(big);
    assert!(matches!(tape.backward(s, &ps), Err(Error::NonFinite { .. })));
}

#[test]
fn frozen_parameters_are_unreached() {
    let mut ps = ParamSet::new();
    let a = ps.insert("A.w", Tensor::scalar(2.0)).unwrap();
    let b = ps.insert("B.w", Tensor::scalar(3.0)).unwrap();
    let mut tape = Tape::with_trainable(&["A"]);
    let (va, vb) = (tape.param(&ps, a), tape.param(&ps, b));
    let y = tape.mul(va, vb).unwrap();
    let g = tape.backward(y, &ps).unwrap();
    assert!(g.reached(a));
    assert!(!g.reached(b));
    assert_eq!(g.get(a).data(), &[3.0]);
    assert_eq!(g.get(b).data(), &[0.0]);
    let mut opt = Optimizer::new(OptimizerSettings::Sgd { lr: 0.1 });
    assert!(opt.step(&mut ps, &g, &[b]).is_err(), "stepping an unreached parameter must fail");
}

// --- finite-difference properties -------------------------------------------

const H: f64 = 1e-6;

/// Relative error of the analytic gradient of `f(x) · w` against central
/// differences, maximised over elements of `x`.
fn fd_error(x: Tensor, weights: &[f64], f: &dyn Fn(&mut Tape, Var) -> Var) -> f64 {
    let eval = |xt: &Tensor| {
        let (ps, id) = one_param(xt.clone());
        let mut tape = Tape::new();
        let v = tape.param(&ps, id);
        let out = f(&mut tape, v);
        tape.value(out)
            .data()
            .iter()
            .zip(weights)
            .map(|(a, b)| a * b)
            .sum::<f64>()
    };
    let (ps, id) = one_param(x.clone());
    let mut tape = Tape::new();
    let v = tape.param(&ps, id);
    let out = f(&mut tape, v);
    let n = tape.value(out).len();
    let wt = Tensor::new(tape.value(out).shape().to_vec(), weights[..n].to_vec()).unwrap();
    let w = tape.constant(wt);
    let prod = tape.mul(out, w).unwrap();
    let loss = tape.sum(prod);
    let g = tape.backward(loss, &ps).unwrap();
    let mut worst: f64 = 0.0;
    for k in 0..x.len() {
        let mut up = x.clone();
        up.data_mut()[k] += H;
        let mut down = x.clone();
        down.data_mut()[k] -= H;
        let num = (eval(&up) - eval(&down)) / (2.0 * H);
        let ana = g.get(id).data()[k];
        worst = worst.max((ana - num).abs() / ana.abs().max(num.abs()).max(1e-5));
    }
    worst
}

fn mat(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-2.0f64..2.0, rows * cols).prop_map(move |d| Tensor::matrix(rows, cols, d).unwrap())
}

fn weights() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, 64)
}

/// Keeps inputs away from the kinks of relu/clamp where central differences
/// straddle a non-differentiable point.
fn away_from(x: Tensor, points: &[f64]) -> Tensor {
    let d = x
        .data()
        .iter()
        .map(|&v| {
            let mut v = v;
            for &p in points {
                if (v - p).abs() < 1e-3 {
                    v = p + 1e-2;
                }
            }
            v
        })
        .collect();
    Tensor::new(x.shape().to_vec(), d).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn grad_matmul(x in mat(3, 4), b in mat(4, 2), w in weights()) {
        let e = fd_error(x, &w, &|t, v| { let c = t.constant(b.clone()); t.matmul(v, c).unwrap() });
        prop_assert!(e < 1e-4, "{e}");
    }

    #[test]
    fn grad_matmul_right(a in mat(3, 4), x in mat(4, 2), w in weights()) {
        let e = fd_error(x, &w, &|t, v| { let c = t.constant(a.clone()); t.matmul(c, v).unwrap() });
        prop_assert!(e < 1e-4, "{e}");
    }

    #[test]
    fn grad_add_bias(x in mat(1, 3), m in mat(4, 3), w in weights()) {
        let e = fd_error(Tensor::new(vec![3], x.into_data()).unwrap(), &w, &|t, v| {
            let c = t.constant(m.clone()); t.add_bias(c, v).unwrap()
        });
        prop_assert!(e < 1e-4, "{e}");
    }

    #[test]
    fn grad_elementwise(x in mat(3, 3), o in mat(3, 3), w in weights()) {
        for op in 0..3 {
            let e = fd_error(x.clone(), &w, &|t, v| {
                let c = t.constant(o.clone());
                match op { 0 => t.add(v, c).unwrap(), 1 => t.sub(c, v).unwrap(), _ => t.mul(v, c).unwrap() }
            });
            prop_assert!(e < 1e-4, "op {op}: {e}");
        }
    }

    #[test]
    fn grad_broadcast_scalar(x in -2.0f64..2.0, o in mat(2, 3), w in weights()) {
        let e = fd_error(Tensor::scalar(x), &w, &|t, v| { let c = t.constant(o.clone()); t.mul(c, v).unwrap() });
        prop_assert!(e < 1e-4, "{e}");
    }

    #[test]
    fn grad_unary(x in mat(3, 4), w in weights()) {
        let x = away_from(x, &[0.0, 1.0]);
        for op in 0..5 {
            let e = fd_error(x.clone(), &w, &|t, v| match op {
                0 => t.relu(v),
                1 => t.tanh(v),
                2 => t.sigmoid(v),
                3 => t.clamp01(v),
                _ => t.scale(v, -1.7),
            });
            prop_assert!(e < 1e-4, "op {op}: {e}");
        }
    }

    #[test]
    fn grad_concat(x in mat(3, 2), o in mat(3, 4), w in weights()) {
        let e = fd_error(x, &w, &|t, v| { let c = t.constant(o.clone()); t.concat(c, v).unwrap() });
        prop_assert!(e < 1e-4, "{e}");
    }

    #[test]
    fn grad_softmax_ce(x in mat(4, 5), labels in prop::collection::vec(0usize..5, 4), w in weights()) {
        let e = fd_error(x, &w, &|t, v| t.softmax_cross_entropy(v, &labels).unwrap());
        prop_assert!(e < 1e-4, "{e}");
    }

    #[test]
    fn grad_uniform_ce(x in mat(4, 5), w in weights()) {
        let e = fd_error(x, &w, &|t, v| t.uniform_cross_entropy(v).unwrap());
        prop_assert!(e < 1e-4, "{e}");
    }

    #[test]
    fn grad_bce(x in mat(5, 1), y in prop::collection::vec(0.0f64..=1.0, 5), w in weights()) {
        let e = fd_error(x, &w, &|t, v| t.binary_cross_entropy(v, &y).unwrap());
        prop_assert!(e < 1e-4, "{e}");
    }

    #[test]
    fn grad_row_reductions(x in mat(3, 4), rw in prop::collection::vec(0.0f64..1.0, 3), w in weights()) {
        let x = away_from(x, &[0.0]);
        for op in 0..5 {
            let e = fd_error(x.clone(), &w, &|t, v| match op {
                0 => t.row_norm(v),
                1 => t.row_sum_sq(v),
                2 => { let r = t.row_norm(v); t.weighted_sum(r, &rw).unwrap() }
                3 => t.mean(v).unwrap(),
                _ => t.sum(v),
            });
            prop_assert!(e < 1e-4, "op {op}: {e}");
        }
    }

    #[test]
    fn softmax_rows_sum_to_one(x in mat(5, 6)) {
        let s = softmax_rows(&x);
        for i in 0..5 {
            let total: f64 = s.row(i).iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!(s.row(i).iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn softmax_ce_is_nonnegative(x in mat(4, 6), labels in prop::collection::vec(0usize..6, 4)) {
        let mut tape = Tape::new();
        let v = tape.constant(x);
        let l = tape.softmax_cross_entropy(v, &labels).unwrap();
        prop_assert!(tape.scalar(l) >= 0.0);
    }

    #[test]
    fn uniform_ce_at_least_ln_c(x in mat(4, 6)) {
        let mut tape = Tape::new();
        let v = tape.constant(x);
        let l = tape.uniform_cross_entropy(v).unwrap();
        prop_assert!(tape.scalar(l) >= 6f64.ln() - 1e-12);
    }
}

/// A two-layer perceptron with softmax cross-entropy: every parameter
/// gradient agrees with central differences.
#[test]
fn two_layer_perceptron_gradients() {
    let mut ps = ParamSet::new();
    let w1 = ps.insert("l1.W", Tensor::matrix(3, 4, (0..12).map(|i| ((i * 7 % 11) as f64 - 5.0) / 7.0).collect()).unwrap()).unwrap();
    let b1 = ps.insert("l1.b", Tensor::new(vec![4], vec![0.1, -0.2, 0.05, 0.3]).unwrap()).unwrap();
    let w2 = ps.insert("l2.W", Tensor::matrix(4, 3, (0..12).map(|i| ((i * 5 % 13) as f64 - 6.0) / 9.0).collect()).unwrap()).unwrap();
    let b2 = ps.insert("l2.b", Tensor::new(vec![3], vec![0.0, 0.1, -0.1]).unwrap()).unwrap();
    let x = Tensor::from_rows(&[&[0.5, -1.0, 2.0], &[1.5, 0.3, -0.7]]).unwrap();
    let labels = [2usize, 0];
    let forward = |ps: &ParamSet, tape: &mut Tape| {
        let xv = tape.constant(x.clone());
        let (a, b, c, d) = (tape.param(ps, w1), tape.param(ps, b1), tape.param(ps, w2), tape.param(ps, b2));
        let h = tape.matmul(xv, a).unwrap();
        let h = tape.add_bias(h, b).unwrap();
        let h = tape.relu(h);
        let o = tape.matmul(h, c).unwrap();
        let o = tape.add_bias(o, d).unwrap();
        tape.softmax_cross_entropy(o, &labels).unwrap()
    };
    let mut tape = Tape::new();
    let loss = forward(&ps, &mut tape);
    let g = tape.backward(loss, &ps).unwrap();
    for id in [w1, b1, w2, b2] {
        for k in 0..ps.get(id).len() {
            let mut p = ps.clone();
            p.get_mut(id).data_mut()[k] += H;
            let mut t = Tape::new();
            let v = forward(&p, &mut t);
            let up = t.scalar(v);
            p.get_mut(id).data_mut()[k] -= 2.0 * H;
            let mut t = Tape::new();
            let v = forward(&p, &mut t);
            let down = t.scalar(v);
            let num = (up - down) / (2.0 * H);
            let ana = g.get(id).data()[k];
            let rel = (ana - num).abs() / ana.abs().max(num.abs()).max(1e-5);
            assert!(rel < 1e-4, "{} [{k}]: {ana} vs {num}", ps.name(id));
        }
    }
}

#[test]
fn matmul_spec_examples() {
    let mut tape = Tape::new();
    let eye = tape.constant(Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap());
    let a = tape.constant(Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap());
    let i = tape.matmul(eye, a).unwrap();
    assert_eq!(tape.value(i).data(), &[1.0, 2.0, 3.0, 4.0]);
    let col = tape.constant(Tensor::from_rows(&[&[5.0], &[6.0]]).unwrap());
    let c = tape.matmul(a, col).unwrap();
    assert_eq!(tape.value(c).data(), &[17.0, 39.0]);
    let z = tape.constant(Tensor::zeros(&[2, 3]));
    let any = tape.constant(Tensor::matrix(3, 4, (0..12).map(|v| v as f64).collect()).unwrap());
    let zz = tape.matmul(z, any).unwrap();
    assert_eq!(tape.value(zz).shape(), &[2, 4]);
    assert!(tape.value(zz).data().iter().all(|&v| v == 0.0));
}

#[test]
fn concat_examples() {
    let (ps, id) = one_param(Tensor::from_rows(&[&[1.0], &[3.0]]).unwrap());
    let mut tape = Tape::new();
    let a = tape.param(&ps, id);
    let b = tape.constant(Tensor::from_rows(&[&[2.0], &[4.0]]).unwrap());
    let c = tape.concat(a, b).unwrap();
    assert_eq!(tape.value(c).data(), &[1.0, 2.0, 3.0, 4.0]);
    let empty = tape.constant(Tensor::zeros(&[2, 0]));
    let same = tape.concat(empty, b).unwrap();
    assert_eq!(tape.value(same), tape.value(b));
    let s = tape.sum(c);
    let g = tape.backward(s, &ps).unwrap();
    assert_eq!(g.get(id).data(), &[1.0, 1.0]);
    let short = tape.constant(Tensor::zeros(&[1, 1]));
    assert!(tape.concat(a, short).is_err());
}

#[test]
fn saturated_and_uniform_losses() {
    let mut tape = Tape::new();
    let u = tape.constant(Tensor::zeros(&[3, 6]));
    let l = tape.softmax_cross_entropy(u, &[0, 3, 5]).unwrap();
    assert!((tape.scalar(l) - 6f64.ln()).abs() < 1e-12);
    let sat = tape.constant(Tensor::from_rows(&[&[0.0, 1000.0, 0.0]]).unwrap());
    let l = tape.softmax_cross_entropy(sat, &[1]).unwrap();
    assert!(tape.scalar(l).abs() < 1e-12);
    let z = tape.constant(Tensor::from_rows(&[&[0.0]]).unwrap());
    let l = tape.binary_cross_entropy(z, &[1.0]).unwrap();
    assert!((tape.scalar(l) - 2f64.ln()).abs() < 1e-12);
    let z = tape.constant(Tensor::from_rows(&[&[1e6]]).unwrap());
    let l = tape.binary_cross_entropy(z, &[1.0]).unwrap();
    assert_eq!(tape.scalar(l), 0.0);
}

#[test]
fn backward_examples() {
    let mut ps = ParamSet::new();
    let x = ps.insert("x", Tensor::scalar(3.0)).unwrap();
    let p = ps.insert("p", Tensor::scalar(7.0)).unwrap();
    let mut tape = Tape::new();
    let xv = tape.param(&ps, x);
    let _ = tape.param(&ps, p);
    let y = tape.mul(xv, xv).unwrap();
    let g1 = tape.backward(y, &ps).unwrap();
    assert_eq!(g1.get(x).data(), &[6.0]);
    assert_eq!(g1.get(p).data(), &[0.0]);
    let g2 = tape.backward(y, &ps).unwrap();
    assert_eq!(g1.get(x), g2.get(x), "two backward passes agree");
}

#[test]
fn zero_gradient_leaves_parameter() {
    for settings in [OptimizerSettings::Sgd { lr: 0.1 }, OptimizerSettings::adam(1e-3)] {
        let (mut ps, id) = one_param(Tensor::scalar(0.25));
        let mut tape = Tape::new();
        let x = tape.param(&ps, id);
        let y = tape.scale(x, 0.0);
        let g = tape.backward(y, &ps).unwrap();
        let mut opt = Optimizer::new(settings);
        opt.step(&mut ps, &g, &[id]).unwrap();
        assert_eq!(ps.get(id).data(), &[0.25]);
    }
}
