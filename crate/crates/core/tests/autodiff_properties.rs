use std::collections::BTreeMap;

use imma::autodiff::{
    adam_update, finite_diff_check, precision_gap, AdamState, Bound, Objective, ParamStore, RandomGraph, Real, Tape, Tensor, Var,
};
use imma::Result;
use proptest::prelude::*;

fn tensor(shape: &[usize], data: Vec<f32>) -> Tensor {
    Tensor::new(shape.to_vec(), data).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn random_graphs_pass_the_gradient_check(seed in any::<u64>()) {
        let (graph, params) = RandomGraph::new(seed);
        let err = finite_diff_check(&graph, &params, 1e-3).unwrap();
        prop_assert!(err <= 1e-3, "seed {seed}: {err:e}");
    }

    #[test]
    fn f32_gradients_track_f64(seed in any::<u64>()) {
        let (graph, params) = RandomGraph::new(seed);
        prop_assert!(precision_gap(&graph, &params).unwrap() <= 1e-4);
    }

    #[test]
    fn forward_and_backward_are_deterministic(seed in any::<u64>()) {
        let (graph, params) = RandomGraph::new(seed);
        let run = || {
            let mut tape = Tape::<f32>::new();
            let b = tape.bind(&params, |_| true);
            let l = graph.loss(&mut tape, &b).unwrap();
            let g = tape.backward(l).unwrap().named(&b, &tape);
            (tape.value(l).item().to_bits(), g)
        };
        let (l1, g1) = run();
        let (l2, g2) = run();
        prop_assert_eq!(l1, l2);
        for (name, t) in &g1 {
            let bits = |t: &Tensor| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(t), bits(&g2[name]));
        }
    }
}

/// `a·mean(silu(x·W)) + b·xent(x·W + c)`, each term optionally switched off.
struct Mix {
    a: f64,
    b: f64,
    labels: Vec<usize>,
}

impl Objective for Mix {
    fn loss<T: Real>(&self, tape: &mut Tape<T>, p: &Bound) -> Result<Var> {
        let (x, w, c) = (p.get("x")?, p.get("w")?, p.get("c")?);
        let h = tape.matmul(x, w)?;
        let s = tape.silu(h)?;
        let l1 = tape.mean(s)?;
        let z = tape.affine(x, w, c)?;
        let l2 = tape.softmax_xent(z, &self.labels)?;
        let l1 = tape.scale(l1, self.a)?;
        let l2 = tape.scale(l2, self.b)?;
        tape.add(l1, l2)
    }
}

fn grads(obj: &Mix, p: &ParamStore) -> BTreeMap<String, Tensor> {
    let mut tape = Tape::<f32>::new();
    let b = tape.bind(p, |_| true);
    let l = obj.loss(&mut tape, &b).unwrap();
    tape.backward(l).unwrap().named(&b, &tape)
}

proptest! {
    #[test]
    fn backward_is_linear(
        x in prop::collection::vec(-2.0f32..2.0, 12),
        w in prop::collection::vec(-1.0f32..1.0, 9),
        c in prop::collection::vec(-1.0f32..1.0, 3),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let mut p = ParamStore::new();
        p.insert("x", tensor(&[4, 3], x));
        p.insert("w", tensor(&[3, 3], w));
        p.insert("c", tensor(&[1, 3], c));
        let labels = vec![0, 2, 1, 2];
        let both = grads(&Mix { a, b, labels: labels.clone() }, &p);
        let g1 = grads(&Mix { a: 1.0, b: 0.0, labels: labels.clone() }, &p);
        let g2 = grads(&Mix { a: 0.0, b: 1.0, labels }, &p);
        for (name, t) in &both {
            for (i, &g) in t.data().iter().enumerate() {
                let want = a * g1[name].data()[i] as f64 + b * g2[name].data()[i] as f64;
                prop_assert!((g as f64 - want).abs() <= 1e-5 * want.abs().max(1.0), "{name}[{i}]: {g} vs {want}");
            }
        }
    }

    #[test]
    fn adam_matches_a_hand_stepped_scalar(
        p0 in -5.0f32..5.0,
        gs in prop::collection::vec(-10.0f32..10.0, 1..6),
        lr in 1e-4f32..1e-1,
    ) {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8f64);
        let (mut p, mut m, mut v) = (p0 as f64, 0.0f64, 0.0f64);
        let mut store = ParamStore::new();
        store.insert("p", Tensor::scalar(p0));
        let mut state = AdamState::default();
        for (k, &g) in gs.iter().enumerate() {
            let g = g as f64;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let t = (k + 1) as i32;
            let mhat = m / (1.0 - b1.powi(t));
            let vhat = v / (1.0 - b2.powi(t));
            p -= lr as f64 * mhat / (vhat.sqrt() + eps);

            let grads = BTreeMap::from([("p".to_string(), Tensor::scalar(g as f32))]);
            adam_update(&mut store, &grads, &mut state, lr, false).unwrap();
            let got = store.get("p").unwrap().item() as f64;
            // One step to 1e-6; later steps carry f32 rounding of the iterate.
            let tol = if t == 1 { 1e-6 } else { 1e-5 };
            prop_assert!((got - p).abs() <= tol, "step {t}: {got} vs {p}");
        }
    }

    #[test]
    fn ascent_is_descent_on_the_negated_gradient(g in prop::collection::vec(-3.0f32..3.0, 4), lr in 1e-4f32..1e-1) {
        let mut a = ParamStore::new();
        a.insert("w", tensor(&[2, 2], vec![0.3, -0.2, 0.1, 0.9]));
        let mut b = a.clone();
        let pos = BTreeMap::from([("w".to_string(), tensor(&[2, 2], g.clone()))]);
        let neg = BTreeMap::from([("w".to_string(), tensor(&[2, 2], g.iter().map(|x| -x).collect()))]);
        adam_update(&mut a, &pos, &mut AdamState::default(), lr, true).unwrap();
        adam_update(&mut b, &neg, &mut AdamState::default(), lr, false).unwrap();
        prop_assert!(a.bit_eq(&b));
    }
}

#[test]
fn first_adam_step_moves_by_lr_times_sign() {
    let mut s = ParamStore::new();
    s.insert("w", tensor(&[1, 3], vec![1.0, 1.0, 1.0]));
    let g = BTreeMap::from([("w".to_string(), tensor(&[1, 3], vec![4.0, -0.5, 2.0]))]);
    adam_update(&mut s, &g, &mut AdamState::default(), 0.01, false).unwrap();
    for (x, want) in s.get("w").unwrap().data().iter().zip([0.99, 1.01, 0.99]) {
        assert!((x - want).abs() < 1e-6, "{x}");
    }
}
