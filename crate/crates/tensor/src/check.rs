//! Central finite-difference gradient checks.
//!
//! The oracle perturbs each input element by ±h and re-runs the forward
//! pass from scratch; it shares nothing with the backward implementation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use crate::{ParamId, ParamStore, Real, Tape, Tensor, Var};

/// Relative error with a floor on the denominator, so entries whose true
/// gradient is ~0 are judged by absolute error instead.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

fn random_tensor<F: Real>(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<F> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| F::from_f64(rng.random_range(-scale..scale))).collect()).unwrap()
}

/// Projects an arbitrary output onto a fixed random direction so the check
/// covers the full Jacobian rather than only its column sums.
fn project<F: Real>(tape: &mut Tape<'_, F>, out: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
    let shape = tape.value(out).shape().to_vec();
    let dir = random_tensor::<F>(&mut rng, &shape, 1.0);
    let dir = tape.constant(dir);
    let prod = tape.mul(out, dir).unwrap();
    tape.sum(prod)
}

/// Compares the analytic gradient of `build` against central differences for
/// every element of every parameter. Returns the worst relative error.
pub fn max_grad_error<F: Real>(store: &ParamStore<F>, h: f64, floor: f64, build: &dyn Fn(&mut Tape<'_, F>, &[ParamId]) -> Var) -> f64 {
    let ids: Vec<ParamId> = store.iter().map(|p| store.id(&p.name).unwrap()).collect();
    let tape = {
        let mut tape = Tape::new(store);
        let loss = build(&mut tape, &ids);
        let grads = tape.backward(loss).unwrap();
        ids.iter().map(|&id| grads.get(id).map(<[F]>::to_vec)).collect::<Vec<_>>()
    };
    let eval = |s: &ParamStore<F>| {
        let mut t = Tape::inference(s);
        let l = build(&mut t, &ids);
        t.scalar(l).as_f64()
    };
    let mut worst = 0.0f64;
    for (k, &id) in ids.iter().enumerate() {
        let n = store.get(id).value.len();
        for i in 0..n {
            let mut s = store.clone();
            let x = s.get(id).value.data()[i].as_f64();
            s.get_mut(id).value.data_mut()[i] = F::from_f64(x + h);
            let up = eval(&s);
            s.get_mut(id).value.data_mut()[i] = F::from_f64(x - h);
            let down = eval(&s);
            let numeric = (up - down) / (2.0 * h);
            let analytic = tape[k].as_ref().map_or(0.0, |g| g[i].as_f64());
            worst = worst.max(rel_err(analytic, numeric, floor));
        }
    }
    worst
}

fn store_of<F: Real>(tensors: Vec<Tensor<F>>) -> ParamStore<F> {
    let mut s = ParamStore::new();
    for (i, t) in tensors.into_iter().enumerate() {
        s.add(format!("p{i}"), t).unwrap();
    }
    s
}

pub type Build<F> = Box<dyn Fn(&mut Tape<'_, F>, &[ParamId]) -> Var>;

/// One randomly sized case per op: (name, inputs, forward builder).
pub fn op_cases<F: Real>(rng: &mut ChaCha8Rng, seed: u64) -> Vec<(&'static str, ParamStore<F>, Build<F>)> {
    let b = rng.random_range(1..4);
    let m = rng.random_range(1..5);
    let k = rng.random_range(1..5);
    let n = rng.random_range(1..5);
    let s = rng.random_range(1..5);
    let h = rng.random_range(1..4);
    let mut t = |shape: &[usize]| random_tensor::<F>(rng, shape, 1.0);
    let mask: Vec<bool> = (0..b).map(|i| (i + seed as usize) % 2 == 0).collect();
    let mut keep: Vec<bool> = (0..b * s).map(|i| (i * 7 + seed as usize) % 3 != 0).collect();
    for r in 0..b {
        keep[r * s] = true;
    }
    let idx: Vec<usize> = (0..6).map(|i| (i * 3 + seed as usize) % m).collect();
    let targets: Vec<usize> = (0..m).map(|i| if i == 0 { n } else { (i + seed as usize) % n }).collect();
    let targets = if targets.iter().all(|&x| x == n) { vec![0; m] } else { targets };
    let v = vec![
        ("matmul", store_of(vec![t(&[m, k]), t(&[k, n])]), Box::new(move |tp: &mut Tape<'_, F>, p: &[ParamId]| {
            let (a, b) = (tp.param(p[0]), tp.param(p[1]));
            let o = tp.matmul(a, b).unwrap();
            project(tp, o, seed)
        }) as Build<F>),
        ("matmul_self", store_of(vec![t(&[m, m])]), Box::new(move |tp, p| {
            let a = tp.param(p[0]);
            let o = tp.matmul(a, a).unwrap();
            project(tp, o, seed)
        })),
        ("add", store_of(vec![t(&[m, n]), t(&[m, n])]), Box::new(move |tp, p| {
            let (a, b) = (tp.param(p[0]), tp.param(p[1]));
            let o = tp.add(a, b).unwrap();
            project(tp, o, seed)
        })),
        ("add_row", store_of(vec![t(&[m, n]), t(&[n])]), Box::new(move |tp, p| {
            let (a, b) = (tp.param(p[0]), tp.param(p[1]));
            let o = tp.add_row(a, b).unwrap();
            project(tp, o, seed)
        })),
        ("mul", store_of(vec![t(&[m, n]), t(&[m, n])]), Box::new(move |tp, p| {
            let (a, b) = (tp.param(p[0]), tp.param(p[1]));
            let o = tp.mul(a, b).unwrap();
            project(tp, o, seed)
        })),
        ("scale", store_of(vec![t(&[m, n])]), Box::new(move |tp, p| {
            let a = tp.param(p[0]);
            let o = tp.scale(a, F::from_f64(-1.7));
            project(tp, o, seed)
        })),
        ("sigmoid", store_of(vec![t(&[m, n])]), Box::new(move |tp, p| {
            let a = tp.param(p[0]);
            let o = tp.sigmoid(a);
            project(tp, o, seed)
        })),
        ("tanh", store_of(vec![t(&[m, n])]), Box::new(move |tp, p| {
            let a = tp.param(p[0]);
            let o = tp.tanh(a);
            project(tp, o, seed)
        })),
        ("reshape", store_of(vec![t(&[m, n])]), Box::new(move |tp, p| {
            let a = tp.param(p[0]);
            let o = tp.reshape(a, &[n, m]).unwrap();
            project(tp, o, seed)
        })),
        ("slice_cols", store_of(vec![t(&[m, n + 2])]), Box::new(move |tp, p| {
            let a = tp.param(p[0]);
            let o = tp.slice_cols(a, 1, n).unwrap();
            project(tp, o, seed)
        })),
        ("slice_rows", store_of(vec![t(&[m + 2, n])]), Box::new(move |tp, p| {
            let a = tp.param(p[0]);
            let o = tp.slice_rows(a, 1, m).unwrap();
            project(tp, o, seed)
        })),
        ("concat_cols", store_of(vec![t(&[m, n]), t(&[m, k])]), Box::new(move |tp, p| {
            let (a, b) = (tp.param(p[0]), tp.param(p[1]));
            let o = tp.concat_cols(&[a, b, a]).unwrap();
            project(tp, o, seed)
        })),
        ("concat_rows", store_of(vec![t(&[m, n]), t(&[k, n])]), Box::new(move |tp, p| {
            let (a, b) = (tp.param(p[0]), tp.param(p[1]));
            let o = tp.concat_rows(&[b, a, b]).unwrap();
            project(tp, o, seed)
        })),
        ("gather_rows", store_of(vec![t(&[m, n])]), Box::new(move |tp, p| {
            let a = tp.param(p[0]);
            let o = tp.gather_rows(a, &idx).unwrap();
            project(tp, o, seed)
        })),
        ("select_rows", store_of(vec![t(&[b, n]), t(&[b, n])]), Box::new(move |tp, p| {
            let (a, c) = (tp.param(p[0]), tp.param(p[1]));
            let o = tp.select_rows(&mask, a, c).unwrap();
            project(tp, o, seed)
        })),
        ("softmax_axis1", store_of(vec![t(&[m, n])]), Box::new(move |tp, p| {
            let a = tp.param(p[0]);
            let o = tp.softmax(a, 1).unwrap();
            project(tp, o, seed)
        })),
        ("softmax_axis0", store_of(vec![t(&[m, n])]), Box::new(move |tp, p| {
            let a = tp.param(p[0]);
            let o = tp.softmax(a, 0).unwrap();
            project(tp, o, seed)
        })),
        ("masked_softmax", store_of(vec![t(&[b, s])]), Box::new(move |tp, p| {
            let a = tp.param(p[0]);
            let o = tp.masked_softmax(a, &keep).unwrap();
            project(tp, o, seed)
        })),
        ("cross_entropy", store_of(vec![t(&[m, n])]), Box::new(move |tp, p| {
            let a = tp.param(p[0]);
            tp.cross_entropy(a, &targets, n).unwrap()
        })),
        ("lstm_cell", store_of(vec![t(&[b, 4 * h]), t(&[b, h])]), Box::new(move |tp, p| {
            let (g, c) = (tp.param(p[0]), tp.param(p[1]));
            let o = tp.lstm_cell(g, c).unwrap();
            project(tp, o, seed)
        })),
        ("additive_scores", store_of(vec![t(&[s * b, h]), t(&[b, h]), t(&[h])]), Box::new(move |tp, p| {
            let (keys, q, v) = (tp.param(p[0]), tp.param(p[1]), tp.param(p[2]));
            let o = tp.additive_scores(keys, q, v).unwrap();
            project(tp, o, seed)
        })),
        ("weighted_sum", store_of(vec![t(&[b, s]), t(&[s * b, h])]), Box::new(move |tp, p| {
            let (w, st) = (tp.param(p[0]), tp.param(p[1]));
            let o = tp.weighted_sum(w, st).unwrap();
            project(tp, o, seed)
        })),
        ("sum", store_of(vec![t(&[m, n])]), Box::new(move |tp, p| {
            let a = tp.param(p[0]);
            let sq = tp.mul(a, a).unwrap();
            tp.sum(sq)
        })),
    ];
    v
}
