//! Loss identities and finite-difference checks of every loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tlf_core::losses::*;
use tlf_tensor::gradcheck::{grad_check, DEFAULT_STEP, DEFAULT_TOLERANCE};
use tlf_tensor::{Graph, Tensor, Var};

fn onehot(c: usize, ks: &[usize]) -> Tensor {
    Tensor::from_fn(&[ks.len(), c], |i| if ks[i / c] == i % c { 1.0 } else { 0.0 })
}

fn random_onehot(n: usize, c: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ks: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();
    onehot(c, &ks)
}

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(-1.5..1.5))
}

fn eval(probs: Vec<f64>, c: usize, f: impl Fn(&mut Graph, Var) -> Var) -> f64 {
    let mut g = Graph::new();
    let n = probs.len() / c;
    let p = g.constant(Tensor::new(&[n, c], probs).unwrap());
    let l = f(&mut g, p);
    g.value(l).item()
}

#[test]
fn cross_entropy_of_uniform_four_classes_is_ln4() {
    let t = random_onehot(10, 4, 1);
    let v = eval(vec![0.25; 40], 4, |g, p| cross_entropy(g, p, &t).unwrap());
    assert!((v - 4f64.ln()).abs() < 1e-9);
}

#[test]
fn focal_without_modulation_is_cross_entropy() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let raw: Vec<f64> = (0..12).map(|_| rng.gen_range(0.01..1.0)).collect();
        let probs: Vec<f64> = raw
            .chunks(4)
            .flat_map(|r| {
                let s: f64 = r.iter().sum();
                r.iter().map(move |v| v / s).collect::<Vec<_>>()
            })
            .collect();
        let t = random_onehot(3, 4, rng.gen());
        let ce = eval(probs.clone(), 4, |g, p| cross_entropy(g, p, &t).unwrap());
        let fl = eval(probs, 4, |g, p| focal_loss(g, p, &t, 0.0, 1.0, FocalForm::Canonical).unwrap());
        assert!((ce - fl).abs() < 1e-12, "{ce} vs {fl}");
    }
}

#[test]
fn focal_single_pixel_at_even_odds() {
    let t = onehot(2, &[0]);
    let v = eval(vec![0.5, 0.5], 2, |g, p| focal_loss(g, p, &t, 2.0, 0.5, FocalForm::Canonical).unwrap());
    assert!((v - 0.08664).abs() < 1e-5, "{v}");
}

#[test]
fn logcosh_at_zero_and_far_out() {
    let mut g = Graph::new();
    let p = g.constant(Tensor::new(&[2, 1], vec![0.3, -0.7]).unwrap());
    let l = logcosh_loss(&mut g, p, &[0.3, -0.7], 100.0).unwrap();
    assert!((g.value(l).item() - 100f64.ln()).abs() < 1e-9);

    let mut g = Graph::new();
    let p = g.leaf(Tensor::new(&[1], vec![50.0]).unwrap(), true);
    let l = logcosh_loss(&mut g, p, &[0.0], 100.0).unwrap();
    let v = g.value(l).item();
    assert!(v.is_finite());
    assert!((v - (100f64.ln() + 50.0 - 2f64.ln())).abs() < 1e-9);
    let grad = g.backward(l).unwrap().get(p).item();
    assert!((grad - 50f64.tanh()).abs() < 1e-15);
}

#[test]
fn total_loss_is_additive() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for lambda in [0.0, 0.3, 1.0, 7.5] {
        let cfg = LossConfig { lambda, ..LossConfig::default() };
        let mut g = Graph::new();
        let logits = g.constant(random(&[2, 3, 3, 4], rng.gen()));
        let probs = g.softmax(logits, 3).unwrap();
        let target = random_onehot(18, 4, rng.gen());
        let target = Tensor::new(&[2, 3, 3, 4], target.data().to_vec()).unwrap();
        let measure = g.constant(random(&[2, 1], rng.gen()));
        let measure_target = [0.4, 0.9];
        let terms = total_loss(&mut g, probs, &target, measure, &measure_target, &cfg).unwrap();
        let ce = cross_entropy(&mut g, probs, &target).unwrap();
        let fl = focal_loss(&mut g, probs, &target, cfg.gamma, cfg.alpha, cfg.focal_form).unwrap();
        let h = logcosh_loss(&mut g, measure, &measure_target, cfg.m).unwrap();
        let expect = lambda * (g.value(fl).item() + g.value(ce).item()) + g.value(h).item();
        assert!((g.value(terms.total).item() - expect).abs() < 1e-12);
        assert_eq!(g.value(terms.segment).item(), g.value(fl).item() + g.value(ce).item());
    }
}

#[test]
fn calibrated_lambda_balances_terms() {
    let lambda = LossConfig::calibrated_lambda(0.8, 4.6);
    assert!((lambda * 0.8 - 4.6).abs() < 1e-12);
    assert_eq!(LossConfig::calibrated_lambda(0.0, 4.6), 1.0);
}

#[test]
fn shape_mismatch_is_an_error() {
    let mut g = Graph::new();
    let p = g.constant(Tensor::full(&[2, 4], 0.25));
    assert!(cross_entropy(&mut g, p, &onehot(4, &[1])).is_err());
    assert!(logcosh_loss(&mut g, p, &[1.0], 100.0).is_err());
}

fn check<F>(inputs: &[(&str, Tensor)], f: F)
where
    F: Fn(&mut Graph, &[Var]) -> tlf_tensor::Result<Var>,
{
    let report = grad_check(f, inputs, DEFAULT_STEP, DEFAULT_TOLERANCE).unwrap();
    assert!(report.passed(), "{report:#?}");
}

fn lift(e: tlf_core::Error) -> tlf_tensor::TensorError {
    match e {
        tlf_core::Error::Tensor(t) => t,
        other => panic!("{other}"),
    }
}

#[test]
fn cross_entropy_gradient() {
    let t = Tensor::new(&[2, 2, 1, 3], random_onehot(4, 3, 11).data().to_vec()).unwrap();
    check(&[("logits", random(&[2, 2, 1, 3], 12))], |g, v| {
        let p = g.softmax(v[0], 3)?;
        cross_entropy(g, p, &t).map_err(lift)
    });
}

#[test]
fn focal_gradients_both_forms() {
    let t = random_onehot(5, 4, 13);
    for (gamma, form) in [
        (2.0, FocalForm::Canonical),
        (0.5, FocalForm::Canonical),
        (0.0, FocalForm::Canonical),
        (2.0, FocalForm::AsPrinted),
    ] {
        check(&[("logits", random(&[5, 4], 14))], |g, v| {
            let p = g.softmax(v[0], 1)?;
            focal_loss(g, p, &t, gamma, 0.5, form).map_err(lift)
        });
    }
}

#[test]
fn logcosh_gradient() {
    let target = [0.2, -0.4, 1.1];
    check(&[("pred", random(&[3, 1], 15))], |g, v| logcosh_loss(g, v[0], &target, 100.0).map_err(lift));
}

#[test]
fn total_loss_gradient() {
    let target = Tensor::new(&[1, 2, 2, 4], random_onehot(4, 4, 16).data().to_vec()).unwrap();
    let cfg = LossConfig { lambda: 0.7, ..LossConfig::default() };
    check(
        &[("logits", random(&[1, 2, 2, 4], 17)), ("measure", random(&[1, 1], 18))],
        |g, v| {
            let p = g.softmax(v[0], 3)?;
            total_loss(g, p, &target, v[1], &[0.5], &cfg).map(|t| t.total).map_err(lift)
        },
    );
}
