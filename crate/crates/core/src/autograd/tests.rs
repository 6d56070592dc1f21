use rand::Rng;

use super::*;
use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::rng::SimRng;

fn random(shape: &[usize], lo: f64, hi: f64, rng: &mut SimRng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

type Build = dyn Fn(&mut Tape, &[Var]) -> Result<Var>;

/// Checks every input's adjoint against central differences of
/// `sum(build(inputs) * weights)` for a fixed random weighting.
fn fd_primitive(inputs: Vec<Tensor>, build: &Build, rng: &mut SimRng) -> f64 {
    let eval = |ins: &[Tensor], weights: Option<&Tensor>| -> (f64, Tensor, Vec<Option<Tensor>>) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ins.iter().map(|t| tape.input(t.clone())).collect();
        let y = build(&mut tape, &vars).unwrap();
        let w = weights.cloned().unwrap_or_else(|| Tensor::full(tape.value(y).shape(), 1.0));
        let wv = tape.constant(w.clone());
        let prod = tape.mul(y, wv).unwrap();
        let loss = tape.sum(prod);
        let grads = tape.backward(loss).unwrap();
        let gs = vars.iter().map(|v| grads.wrt(*v).cloned()).collect();
        (tape.value(loss).item(), w, gs)
    };
    let (_, shape_probe, _) = eval(&inputs, None);
    let weights = random(shape_probe.shape(), -1.0, 1.0, rng);
    let (_, _, analytic) = eval(&inputs, Some(&weights));

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let n = input.len();
        for _ in 0..n.min(12) {
            let idx = rng.random_range(0..n);
            let mut plus = inputs.clone();
            plus[k].data_mut()[idx] += h;
            let mut minus = inputs.clone();
            minus[k].data_mut()[idx] -= h;
            let numeric = (eval(&plus, Some(&weights)).0 - eval(&minus, Some(&weights)).0) / (2.0 * h);
            let a = analytic[k].as_ref().map_or(0.0, |g| g.data()[idx]);
            worst = worst.max(relative_error(a, numeric, 1e-6));
        }
    }
    worst
}

fn dims(rng: &mut SimRng) -> (usize, usize) {
    (rng.random_range(1..=64), rng.random_range(1..=64))
}

#[test]
fn primitives_pass_finite_differences() {
    let mut rng = seeded(1234);
    for trial in 0..6 {
        let (r, c) = dims(&mut rng);
        let k = rng.random_range(1..=64);
        let cases: Vec<(&str, Vec<Tensor>, Box<Build>)> = vec![
            (
                "matmul",
                vec![random(&[r, k], -1.0, 1.0, &mut rng), random(&[k, c], -1.0, 1.0, &mut rng)],
                Box::new(|t: &mut Tape, v: &[Var]| t.matmul(v[0], v[1])),
            ),
            (
                "add",
                vec![random(&[r, c], -1.0, 1.0, &mut rng), random(&[r, c], -1.0, 1.0, &mut rng)],
                Box::new(|t: &mut Tape, v: &[Var]| t.add(v[0], v[1])),
            ),
            (
                "add_row",
                vec![random(&[r, c], -1.0, 1.0, &mut rng), random(&[1, c], -1.0, 1.0, &mut rng)],
                Box::new(|t: &mut Tape, v: &[Var]| t.add(v[0], v[1])),
            ),
            (
                "sub",
                vec![random(&[r, c], -1.0, 1.0, &mut rng), random(&[r, c], -1.0, 1.0, &mut rng)],
                Box::new(|t: &mut Tape, v: &[Var]| t.sub(v[0], v[1])),
            ),
            (
                "mul",
                vec![random(&[r, c], -1.0, 1.0, &mut rng), random(&[r, c], -1.0, 1.0, &mut rng)],
                Box::new(|t: &mut Tape, v: &[Var]| t.mul(v[0], v[1])),
            ),
            (
                "affine",
                vec![random(&[r, c], -1.0, 1.0, &mut rng)],
                Box::new(|t: &mut Tape, v: &[Var]| Ok(t.affine(v[0], -1.7, 0.3))),
            ),
            (
                "concat",
                vec![random(&[r, c], -1.0, 1.0, &mut rng), random(&[r, k], -1.0, 1.0, &mut rng)],
                Box::new(|t: &mut Tape, v: &[Var]| t.concat(&[v[0], v[1], v[0]])),
            ),
            (
                "slice",
                vec![random(&[r, c + 2], -1.0, 1.0, &mut rng)],
                Box::new(move |t: &mut Tape, v: &[Var]| t.slice(v[0], 1, c + 1)),
            ),
            (
                "tanh",
                vec![random(&[r, c], -2.0, 2.0, &mut rng)],
                Box::new(|t: &mut Tape, v: &[Var]| Ok(t.tanh(v[0]))),
            ),
            (
                "sigmoid",
                vec![random(&[r, c], -3.0, 3.0, &mut rng)],
                Box::new(|t: &mut Tape, v: &[Var]| Ok(t.sigmoid(v[0]))),
            ),
            (
                "softmax",
                vec![random(&[r, c], -2.0, 2.0, &mut rng)],
                Box::new(|t: &mut Tape, v: &[Var]| Ok(t.softmax(v[0]))),
            ),
            (
                "log",
                vec![random(&[r, c], 0.5, 2.0, &mut rng)],
                Box::new(|t: &mut Tape, v: &[Var]| Ok(t.log(v[0]))),
            ),
            (
                "mean",
                vec![random(&[r, c], -1.0, 1.0, &mut rng)],
                Box::new(|t: &mut Tape, v: &[Var]| Ok(t.mean(v[0]))),
            ),
            (
                "sum_last",
                vec![random(&[r, c], -1.0, 1.0, &mut rng)],
                Box::new(|t: &mut Tape, v: &[Var]| Ok(t.sum_last(v[0]))),
            ),
            (
                "gather",
                vec![random(&[r, c], -1.0, 1.0, &mut rng)],
                Box::new(move |t: &mut Tape, v: &[Var]| {
                    let idx: Vec<usize> = (0..2 * r).map(|i| (i * 7 + trial) % r).collect();
                    t.gather(v[0], &idx)
                }),
            ),
            (
                "bce",
                vec![random(&[r, 1], 0.05, 0.95, &mut rng)],
                Box::new(move |t: &mut Tape, v: &[Var]| {
                    let labels: Vec<f64> = (0..r).map(|i| (i % 2) as f64).collect();
                    t.bce(v[0], &labels)
                }),
            ),
        ];
        for (name, inputs, build) in cases {
            let err = fd_primitive(inputs, build.as_ref(), &mut rng);
            assert!(err <= 1e-4, "{name} trial {trial}: relative error {err}");
        }
    }
}

#[test]
fn matmul_identity() {
    let mut rng = seeded(2);
    let a = random(&[5, 7], -1.0, 1.0, &mut rng);
    let mut tape = Tape::new();
    let va = tape.constant(a.clone());
    let i = tape.constant(Tensor::identity(7));
    let out = tape.matmul(va, i).unwrap();
    assert_eq!(tape.value(out), &a);
}

#[test]
fn matmul_shape_error_names_op() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[4, 2]));
    match tape.matmul(a, b) {
        Err(Error::Shape { op, detail }) => {
            assert_eq!(op, "matmul");
            assert!(detail.contains("[2, 3]") && detail.contains("[4, 2]"), "{detail}");
        }
        other => panic!("expected shape error, got {other:?}"),
    }
}

#[test]
fn softmax_rows_normalised() {
    let mut rng = seeded(3);
    let mut tape = Tape::new();
    let x = tape.constant(random(&[20, 14], -30.0, 30.0, &mut rng));
    let y = tape.softmax(x);
    let y = tape.value(y);
    for r in 0..y.rows() {
        assert!(y.row(r).iter().all(|&p| p >= 0.0));
        assert!((y.row(r).iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }
}

#[test]
fn sigmoid_at_zero() {
    assert_eq!(sigmoid(0.0), 0.5);
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::scalar(0.0));
    let y = tape.sigmoid(x);
    assert_eq!(tape.value(y).item(), 0.5);
}

#[test]
fn backward_of_sum_is_ones() {
    let mut store = ParameterStore::new();
    store.insert("p", Tensor::matrix(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.0, 9.0]).unwrap()).unwrap();
    let mut tape = Tape::new();
    let p = tape.param(&store, "p").unwrap();
    let loss = tape.sum(p);
    let grads = tape.backward(loss).unwrap().for_store(&store);
    assert_eq!(grads.get(0).data(), &[1.0; 6]);
}

#[test]
fn disconnected_parameter_gets_zero() {
    let mut store = ParameterStore::new();
    store.insert("used", Tensor::full(&[2], 1.5)).unwrap();
    store.insert("unused", Tensor::full(&[3], 2.0)).unwrap();
    let mut tape = Tape::new();
    let u = tape.param(&store, "used").unwrap();
    let _ = tape.param(&store, "unused").unwrap();
    let sq = tape.mul(u, u).unwrap();
    let loss = tape.sum(sq);
    let grads = tape.backward(loss).unwrap().for_store(&store);
    assert_eq!(grads.by_name(&store, "used").unwrap().data(), &[3.0, 3.0]);
    assert_eq!(grads.by_name(&store, "unused").unwrap().data(), &[0.0; 3]);
}

#[test]
fn backward_requires_scalar() {
    let mut tape = Tape::new();
    let x = tape.input(Tensor::zeros(&[2, 2]));
    assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
}

/// loss = mean((W x - y)^2) against central differences.
#[test]
fn least_squares_gradient_matches_finite_differences() {
    let mut rng = seeded(44);
    let mut store = ParameterStore::new();
    store.insert("w", random(&[3, 4], -1.0, 1.0, &mut rng)).unwrap();
    let x = random(&[4, 1], -1.0, 1.0, &mut rng);
    let y = random(&[3, 1], -1.0, 1.0, &mut rng);

    let build = |s: &ParameterStore| -> Result<(Tape, Var)> {
        let mut tape = Tape::new();
        let w = tape.param(s, "w")?;
        let xv = tape.constant(x.clone());
        let yv = tape.constant(y.clone());
        let wx = tape.matmul(w, xv)?;
        let d = tape.sub(wx, yv)?;
        let sq = tape.mul(d, d)?;
        let loss = tape.mean(sq);
        Ok((tape, loss))
    };
    // Independent oracle: the closed form 2/n * (Wx - y) x^T.
    let w = store.get("w").unwrap().clone();
    let (tape, loss) = build(&store).unwrap();
    let analytic = tape.backward(loss).unwrap().for_store(&store);
    for i in 0..3 {
        let resid: f64 = (0..4).map(|j| w.data()[i * 4 + j] * x.data()[j]).sum::<f64>() - y.data()[i];
        for j in 0..4 {
            let closed = 2.0 / 3.0 * resid * x.data()[j];
            assert!((analytic.get(0).data()[i * 4 + j] - closed).abs() < 1e-12);
        }
    }

    let report = gradient_check(
        &store,
        |s| build(s).map(|(t, l)| t.value(l).item()),
        |s| build(s).and_then(|(t, l)| Ok(t.backward(l)?.for_store(s))),
        &GradCheckOptions::default(),
    )
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

#[test]
fn gradient_check_on_linear_model_is_tight() {
    let mut rng = seeded(5);
    let mut store = ParameterStore::new();
    store.insert("w", random(&[6, 3], -1.0, 1.0, &mut rng)).unwrap();
    store.insert("b", random(&[1, 3], -1.0, 1.0, &mut rng)).unwrap();
    let x = random(&[8, 6], -1.0, 1.0, &mut rng);
    let c = random(&[8, 3], -1.0, 1.0, &mut rng);
    let build = |s: &ParameterStore| -> Result<(Tape, Var)> {
        let mut tape = Tape::new();
        let w = tape.param(s, "w")?;
        let b = tape.param(s, "b")?;
        let xv = tape.constant(x.clone());
        let cv = tape.constant(c.clone());
        let xw = tape.matmul(xv, w)?;
        let lin = tape.add(xw, b)?;
        let weighted = tape.mul(lin, cv)?;
        let loss = tape.sum(weighted);
        Ok((tape, loss))
    };
    let report = gradient_check(
        &store,
        |s| build(s).map(|(t, l)| t.value(l).item()),
        |s| build(s).and_then(|(t, l)| Ok(t.backward(l)?.for_store(s))),
        &GradCheckOptions::default(),
    )
    .unwrap();
    assert!(report.max_rel_error() <= 1e-7, "{report:?}");
}

#[test]
fn gradient_check_flags_corrupted_adjoint() {
    let mut store = ParameterStore::new();
    store.insert("good", Tensor::full(&[3], 0.7)).unwrap();
    store.insert("bad", Tensor::full(&[3], -0.4)).unwrap();
    let build = |s: &ParameterStore| -> Result<(Tape, Var)> {
        let mut tape = Tape::new();
        let g = tape.param(s, "good")?;
        let b = tape.param(s, "bad")?;
        let gb = tape.mul(g, b)?;
        let t = tape.tanh(gb);
        let loss = tape.sum(t);
        Ok((tape, loss))
    };
    let report = gradient_check(
        &store,
        |s| build(s).map(|(t, l)| t.value(l).item()),
        |s| {
            let (t, l) = build(s)?;
            let mut grads = t.backward(l)?.for_store(s);
            let mut tensors = grads.tensors().to_vec();
            tensors[1].data_mut()[0] *= 1.5;
            grads = Grads::new(tensors);
            Ok(grads)
        },
        &GradCheckOptions::default(),
    )
    .unwrap();
    let failures: Vec<&str> = report.failures().iter().map(|f| f.name.as_str()).collect();
    assert_eq!(failures, vec!["bad"]);
    assert!(!report.passed());
}

#[test]
fn gumbel_hard_is_one_hot_and_matches_soft_argmax() {
    let mut rng = seeded(8);
    for _ in 0..50 {
        let logits = random(&[3, 14], -2.0, 2.0, &mut rng);
        let noise = gumbel_noise(&[3, 14], &mut rng);
        let mut tape = Tape::new();
        let l = tape.constant(logits);
        let soft = gumbel_softmax_with_noise(&mut tape, l, noise.clone(), 0.7, false).unwrap();
        let hard = gumbel_softmax_with_noise(&mut tape, l, noise, 0.7, true).unwrap();
        let (s, h) = (tape.value(soft), tape.value(hard));
        for r in 0..3 {
            assert!((s.row(r).iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            assert_eq!(h.row(r).iter().filter(|&&x| x == 1.0).count(), 1);
            assert_eq!(h.row(r).iter().filter(|&&x| x == 0.0).count(), 13);
            assert_eq!(argmax(h.row(r)), argmax(s.row(r)));
        }
    }
}

#[test]
fn gumbel_straight_through_routes_soft_adjoint() {
    let mut rng = seeded(9);
    let logits = random(&[1, 5], -1.0, 1.0, &mut rng);
    let noise = gumbel_noise(&[1, 5], &mut rng);
    let w = random(&[1, 5], -1.0, 1.0, &mut rng);
    let grad_of = |hard: bool| {
        let mut tape = Tape::new();
        let l = tape.input(logits.clone());
        let y = gumbel_softmax_with_noise(&mut tape, l, noise.clone(), 0.5, hard).unwrap();
        let wv = tape.constant(w.clone());
        let p = tape.mul(y, wv).unwrap();
        let loss = tape.sum(p);
        tape.backward(loss).unwrap().wrt(l).unwrap().clone()
    };
    assert_eq!(grad_of(true), grad_of(false));
}

#[test]
fn gumbel_rejects_nonpositive_temperature() {
    let mut tape = Tape::new();
    let l = tape.constant(Tensor::zeros(&[1, 4]));
    let mut rng = seeded(1);
    assert!(matches!(
        gumbel_softmax_sample(&mut tape, l, 0.0, true, &mut rng),
        Err(Error::Argument(_))
    ));
}

/// Gumbel-max: with a logit gap of 20 and temperature 0.5 the sampled argmax
/// almost never leaves the dominant entry.
#[test]
fn gumbel_peaked_logits_keep_argmax() {
    let mut rng = seeded(10);
    let mut logits = vec![0.0; 14];
    logits[6] = 20.0;
    let t = Tensor::matrix(1, 14, logits).unwrap();
    let mut hits = 0;
    let draws = 10_000;
    for _ in 0..draws {
        let mut tape = Tape::new();
        let l = tape.constant(t.clone());
        let y = gumbel_softmax_sample(&mut tape, l, 0.5, true, &mut rng).unwrap();
        if argmax(tape.value(y).row(0)) == 6 {
            hits += 1;
        }
    }
    assert!(hits as f64 >= 0.99 * draws as f64, "{hits}");
}
