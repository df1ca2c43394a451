//! Central finite-difference checks for every differentiable op.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ranmt_tensor::check::{max_grad_error, op_cases};
use ranmt_tensor::{ParamStore, Tape, Tensor};

#[test]
fn every_op_matches_finite_differences_in_f64() {
    for seed in 0..6u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (name, store, build) in op_cases::<f64>(&mut rng, seed) {
            let err = max_grad_error(&store, 1e-5, 1e-3, &*build);
            assert!(err < 1e-5, "op {name} (seed {seed}): relative error {err:e}");
        }
    }
}

#[test]
fn every_op_matches_finite_differences_in_f32() {
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        for (name, store, build) in op_cases::<f32>(&mut rng, seed) {
            let err = max_grad_error(&store, 1e-2, 1e-1, &*build);
            assert!(err < 1e-3, "op {name} (seed {seed}): relative error {err:e}");
        }
    }
}

#[test]
fn square_at_three_has_gradient_six() {
    let mut store = ParamStore::<f64>::new();
    let x = store.add("x", Tensor::scalar(3.0)).unwrap();
    let mut tape = Tape::new(&store);
    let v = tape.param(x);
    let sq = tape.mul(v, v).unwrap();
    let loss = tape.sum(sq);
    let g = tape.backward(loss).unwrap();
    let analytic = g.get(x).unwrap()[0];
    // central difference oracle
    let f = |x: f64| x * x;
    let numeric = (f(3.0 + 1e-5) - f(3.0 - 1e-5)) / 2e-5;
    assert!((numeric - 6.0).abs() < 1e-8);
    assert!((analytic - 6.0).abs() < 1e-12);
}

#[test]
fn constant_loss_gives_zero_gradients() {
    let mut store = ParamStore::<f64>::new();
    let w = store.add("w", Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap()).unwrap();
    let mut tape = Tape::new(&store);
    let _ = tape.param(w);
    let c = tape.constant(Tensor::from_rows(&[vec![4.0, 5.0]]).unwrap());
    let loss = tape.sum(c);
    let g = tape.backward(loss).unwrap();
    store.accumulate(&g);
    assert!(store.get(w).grad.iter().all(|&x| x == 0.0));
}

#[test]
fn backward_twice_doubles_accumulated_gradients() {
    let mut store = ParamStore::<f64>::new();
    let w = store.add("w", Tensor::from_rows(&[vec![0.3, -0.2], vec![1.1, 0.4]]).unwrap()).unwrap();
    let g = {
        let mut tape = Tape::new(&store);
        let v = tape.param(w);
        let t = tape.tanh(v);
        let m = tape.matmul(t, v).unwrap();
        let loss = tape.sum(m);
        let g1 = tape.backward(loss).unwrap();
        let g2 = tape.backward(loss).unwrap();
        (g1, g2)
    };
    store.accumulate(&g.0);
    let once = store.get(w).grad.clone();
    store.accumulate(&g.1);
    let twice = store.get(w).grad.clone();
    for (a, b) in once.iter().zip(&twice) {
        assert_eq!(2.0 * a, *b);
    }
}

#[test]
fn backward_rejects_non_scalar() {
    let mut store = ParamStore::<f64>::new();
    let w = store.add("w", Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap()).unwrap();
    let mut tape = Tape::new(&store);
    let v = tape.param(w);
    let t = tape.tanh(v);
    assert!(tape.backward(t).is_err());
}
