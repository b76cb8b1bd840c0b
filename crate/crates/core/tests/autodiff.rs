#[path = "support/grad_suite.rs"]
mod grad_suite;

use fable_core::autodiff::*;
use proptest::prelude::*;

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

#[test]
fn every_primitive_passes_randomized_gradient_checks() {
    let results = grad_suite::run(100, 20240901);
    assert_eq!(results.len(), grad_suite::PRIMITIVES.len());
    for r in &results {
        assert_eq!(r.instances, 100);
        assert!(
            r.worst <= grad_suite::TOLERANCE,
            "{} worst relative error {}",
            r.name,
            r.worst
        );
    }
}

#[test]
fn mlp_gradients_match_finite_differences() {
    for seed in 0..5 {
        let worst = grad_suite::mlp_worst(seed);
        assert!(worst <= grad_suite::TOLERANCE, "seed {seed}: {worst}");
    }
}

#[test]
fn gradients_accumulate_over_shared_inputs() {
    // f(x) = sum(x * x) + sum(x) has gradient 2x + 1
    let tape = Tape::new();
    let x = tape.param(Tensor::vector(vec![0.5, -2.0, 3.0]));
    let f = tape
        .add(
            tape.sum(tape.mul(x, x).unwrap()).unwrap(),
            tape.sum(x).unwrap(),
        )
        .unwrap();
    let g = tape.backward(f).unwrap();
    assert_eq!(g.get(x).unwrap(), &[2.0, -3.0, 7.0]);
}

#[test]
fn constants_get_no_gradient() {
    let tape = Tape::new();
    let x = tape.param(Tensor::vector(vec![1.0, 2.0]));
    let c = tape.constant(Tensor::vector(vec![3.0, 4.0]));
    let f = tape.sum(tape.mul(x, c).unwrap()).unwrap();
    let g = tape.backward(f).unwrap();
    assert_eq!(g.get(x).unwrap(), &[3.0, 4.0]);
    assert!(g.get(c).is_none());
}

#[test]
fn backward_needs_a_scalar() {
    let tape = Tape::new();
    let x = tape.param(Tensor::vector(vec![1.0, 2.0]));
    assert!(tape.backward(x).is_err());
}

#[test]
fn layer_norm_forward_matches_definition() {
    let x = [1.0, 2.0, 4.0, -1.0];
    let mean = 1.5;
    let var = x.iter().map(|v: &f64| (v - mean).powi(2)).sum::<f64>() / 4.0;
    let tape = Tape::new();
    let out = tape
        .layer_norm(
            tape.constant(t(&[1, 4], &x)),
            tape.constant(Tensor::vector(vec![2.0; 4])),
            tape.constant(Tensor::vector(vec![0.5; 4])),
            1e-5,
        )
        .unwrap();
    let got = tape.value(out);
    for (g, v) in got.data().iter().zip(x) {
        let want = (v - mean) / (var + 1e-5).sqrt() * 2.0 + 0.5;
        assert!((g - want).abs() < 1e-12);
    }
}

#[test]
fn gelu_forward_matches_tanh_form() {
    let xs = [-3.0, -0.5, 0.0, 0.7, 2.5];
    let tape = Tape::new();
    let out = tape.value(
        tape.gelu(tape.constant(Tensor::vector(xs.to_vec())))
            .unwrap(),
    );
    for (g, x) in out.data().iter().zip(xs) {
        let want = 0.5 * x * (1.0 + (0.7978845608028654 * (x + 0.044715 * x * x * x)).tanh());
        assert!((g - want).abs() < 1e-14);
    }
}

#[test]
fn softmax_handles_large_and_masked_logits() {
    let tape = Tape::new();
    let out = tape.value(
        tape.softmax(tape.constant(t(&[1, 3], &[1000.0, 1000.0, f64::NEG_INFINITY])))
            .unwrap(),
    );
    assert_eq!(out.data(), &[0.5, 0.5, 0.0]);
}

#[test]
fn nll_is_sum_of_negative_log_probs() {
    let tape = Tape::new();
    let p = tape.constant(t(&[2, 2], &[0.25, 0.75, 0.5, 0.5]));
    let v = tape.item(tape.nll(p, vec![(0, 0), (1, 1), (0, 1)]).unwrap());
    assert!((v - (4f64.ln() + 2f64.ln() - 0.75f64.ln())).abs() < 1e-14);
}

#[test]
fn shape_errors_are_reported() {
    let tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2, 3]));
    assert!(matches!(tape.matmul(a, b), Err(AutodiffError::Shape(_))));
    assert!(tape.slice(a, 1, 2, 2).is_err());
    assert!(tape.embedding(a, &[5]).is_err());
    assert!(tape.nll(a, vec![(0, 3)]).is_err());
}

#[test]
fn adam_matches_hand_computed_steps() {
    // two steps on f(p) = p^2 from p = 1 with lr 0.1
    let mut p = Tensor::scalar(1.0);
    let mut st = OptimizerState::new(Adam::new(0.1));
    let (b1, b2, eps) = (0.9, 0.999, 1e-8);
    let (mut m, mut v, mut want) = (0.0, 0.0, 1.0f64);
    for step in 1..=2 {
        let g = 2.0 * want;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - b1.powi(step));
        let vh = v / (1.0 - b2.powi(step));
        want -= 0.1 * mh / (vh.sqrt() + eps);
        p.set_grad(vec![2.0 * p.item()]).unwrap();
        optimizer_step(&mut st, &mut [&mut p]).unwrap();
        assert!((p.item() - want).abs() < 1e-15);
    }
}

#[test]
fn adam_requires_gradients() {
    let mut p = Tensor::scalar(1.0);
    let mut st = OptimizerState::new(Adam::new(0.1));
    assert!(matches!(
        optimizer_step(&mut st, &mut [&mut p]),
        Err(AutodiffError::Contract(_))
    ));
}

#[test]
fn adam_minimizes_a_quadratic() {
    let target = [1.0, -2.0, 0.5];
    let mut p = Tensor::vector(vec![0.0; 3]);
    let mut st = OptimizerState::new(Adam::new(0.05));
    for _ in 0..2000 {
        let tape = Tape::new();
        let x = tape.param(p.clone());
        let d = tape
            .sub(x, tape.constant(Tensor::vector(target.to_vec())))
            .unwrap();
        let loss = tape.squared_norm(d).unwrap();
        p.set_grad(tape.backward(loss).unwrap().take(x).unwrap())
            .unwrap();
        optimizer_step(&mut st, &mut [&mut p]).unwrap();
    }
    for (a, b) in p.data().iter().zip(target) {
        assert!((a - b).abs() < 1e-3);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_composites_have_correct_gradients(
        data in prop::collection::vec(-1.5f64..1.5, 12),
        w in prop::collection::vec(-1.0f64..1.0, 12),
        op in 0usize..4,
    ) {
        let x = t(&[3, 4], &data);
        let wt = t(&[4, 3], &w);
        let err = finite_difference_check(
            |tp, v| {
                let h = match op {
                    0 => tp.gelu(v)?,
                    1 => tp.softmax(v)?,
                    2 => tp.layer_norm(v, tp.constant(Tensor::vector(vec![1.0; 4])), tp.constant(Tensor::zeros(&[4])), 1e-5)?,
                    _ => tp.mul(v, v)?,
                };
                let m = tp.matmul(h, tp.constant(wt.clone()))?;
                tp.squared_norm(tp.gelu(m)?)
            },
            &x,
            grad_suite::STEP,
        ).unwrap();
        prop_assert!(err <= grad_suite::TOLERANCE, "{}", err);
    }

    #[test]
    fn replay_reproduces_values(data in prop::collection::vec(-2f64..2.0, 6)) {
        let tape = Tape::new();
        let x = tape.param(t(&[2, 3], &data));
        let y = tape.softmax(tape.gelu(x).unwrap()).unwrap();
        let replayed = tape.replay().unwrap();
        prop_assert!(replayed[y.index()].bit_eq(&tape.value(y)));
    }
}
