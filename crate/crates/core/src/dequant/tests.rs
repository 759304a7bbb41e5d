use super::*;
use crate::flow::{LayerSpec, ModelSpec, OrderKind};
use crate::transforms::TransformFamily;

fn model(family: TransformFamily, dims: usize, levels: usize, seed: u64, perturb: f64) -> SubsetFlowModel {
    let spec = ModelSpec {
        layers: vec![LayerSpec { family, hidden: vec![16], order: OrderKind::Raster }],
        bin_conditioning: true,
    };
    let mut rng = Rng::new(seed);
    let mut m = SubsetFlowModel::new(&spec, dims, levels, &mut rng).unwrap();
    m.perturb(perturb, &mut rng);
    m
}

#[test]
fn uniform_model_bounds_are_exact() {
    let m = model(TransformFamily::Linear { bins: 4 }, 3, 4, 1, 0.0);
    let deq = Dequantizer::uniform(3, 4);
    let mut rng = Rng::new(2);
    let target = -3.0 * 4f64.ln();
    for k in [1, 10] {
        let est = iwbo(&m, &deq, &[0, 2, 3], k, &mut rng).unwrap();
        assert!((est.value - target).abs() < 1e-12);
    }
    assert!((bits_per_dim(target, 3) - 2.0).abs() < 1e-15);
}

#[test]
fn linear_model_has_zero_gap() {
    let m = model(TransformFamily::Linear { bins: 4 }, 3, 4, 3, 0.7);
    let deq = Dequantizer::uniform(3, 4);
    let mut rng = Rng::new(4);
    let x = [1, 3, 0];
    let exact = m.exact_log_likelihood(&x).unwrap();
    for _ in 0..20 {
        assert!((elbo(&m, &deq, &x, &mut rng).unwrap().value - exact).abs() < 1e-12);
    }
    assert!(dequant_gap(&m, &deq, &x, 10, &mut rng).unwrap().abs() < 1e-12);
}

#[test]
fn single_sample_iwbo_is_the_elbo() {
    let m = model(TransformFamily::Quadratic { bins: 5 }, 3, 4, 5, 0.7);
    let mut rng = Rng::new(6);
    let deq = Dequantizer::variational(3, 4, &[8], &mut rng);
    let mut a = Rng::new(7);
    let mut b = Rng::new(7);
    for _ in 0..5 {
        let e = elbo(&m, &deq, &[2, 1, 0], &mut a).unwrap();
        let i = iwbo(&m, &deq, &[2, 1, 0], 1, &mut b).unwrap();
        assert_eq!(e.value.to_bits(), i.value.to_bits());
    }
}

#[test]
fn quadratic_model_bounds_sit_below_exact() {
    let m = model(TransformFamily::Quadratic { bins: 3 }, 2, 3, 8, 1.0);
    let deq = Dequantizer::uniform(2, 3);
    let mut rng = Rng::new(9);
    let x = [2, 0];
    let exact = m.exact_log_likelihood(&x).unwrap();
    let n = 4000;
    let vals: Vec<f64> = (0..n).map(|_| elbo(&m, &deq, &x, &mut rng).unwrap().value).collect();
    let mean = vals.iter().sum::<f64>() / n as f64;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    assert!(mean <= exact + 3.0 * (var / n as f64).sqrt());
    assert!(mean < exact);
}

#[test]
fn variational_noise_stays_in_bin() {
    let mut rng = Rng::new(10);
    let mut deq = Dequantizer::variational(2, 4, &[8], &mut rng);
    let noisy: Vec<Tensor> = deq.tensors().iter().map(|t| t.map(|v| v + 3.0 * rng.normal())).collect();
    deq.set_tensors(noisy).unwrap();
    let x = [3, 0];
    for (y, lq) in deq.draws(&x, 20_000, &rng) {
        assert!(y[0] >= 3.0 && y[0] < 4.0 && y[1] >= 0.0 && y[1] < 1.0);
        assert!(lq.is_finite());
    }
}

#[test]
fn truncated_logistic_normalizes() {
    // Midpoint rule over [0, 1) of the closed-form density.
    for (a, b) in [(0.0, 0.0), (2.0, -1.5), (-1.0, -3.0), (0.5, 2.0)] {
        for i in 0..100 {
            let (u, _) = truncated_logistic(a, b, (i as f64 + 0.5) / 100.0);
            assert!((0.0..1.0).contains(&u));
        }
        let grid = 20_000;
        let mut mass = 0.0;
        for i in 0..grid {
            let u = (i as f64 + 0.5) / grid as f64;
            let mu = crate::numerics::ad::sigmoid_f64(a);
            let s = f64::exp(b).max(1e-3);
            let t = (u - mu) / s;
            let lo = crate::numerics::ad::sigmoid_f64(-mu / s);
            let hi = crate::numerics::ad::sigmoid_f64((1.0 - mu) / s);
            let dens = crate::numerics::ad::sigmoid_f64(t) * crate::numerics::ad::sigmoid_f64(-t) / s / (hi - lo);
            mass += dens / grid as f64;
        }
        assert!((mass - 1.0).abs() < 1e-6);
    }
}

#[test]
fn truncated_logistic_density_matches_quantile_slope() {
    for (a, b) in [(0.3, -0.5), (-2.0, -2.0)] {
        for eps in [0.1, 0.5, 0.93] {
            let h = 1e-6;
            let (u0, lq) = truncated_logistic(a, b, eps);
            let (u1, _) = truncated_logistic(a, b, eps + h);
            let (um, _) = truncated_logistic(a, b, eps - h);
            let du = (u1 - um) / (2.0 * h);
            assert!(((-lq).exp() - du).abs() / du < 1e-5, "{u0}");
        }
    }
}

#[test]
fn exact_objective_on_uniform_model() {
    let m = model(TransformFamily::Quadratic { bins: 4 }, 3, 4, 11, 0.0);
    let deq = Dequantizer::uniform(3, 4);
    let batch = vec![vec![0, 1, 2], vec![3, 3, 3]];
    let out = train_objective(&m, &deq, Objective::Exact, &batch, &mut Rng::new(0)).unwrap();
    assert!((out.loss - 3.0 * 4f64.ln()).abs() < 1e-12);
    assert_eq!(out.model_grads.len(), m.tensors().len());
}

#[test]
fn elbo_objective_matches_exact_for_linear_model() {
    let m = model(TransformFamily::Linear { bins: 4 }, 3, 4, 12, 0.8);
    let deq = Dequantizer::uniform(3, 4);
    let batch = vec![vec![0, 1, 2], vec![3, 0, 1], vec![2, 2, 2]];
    let exact = train_objective(&m, &deq, Objective::Exact, &batch, &mut Rng::new(0)).unwrap();
    for seed in 0..5 {
        let e = train_objective(&m, &deq, Objective::ElboUniform, &batch, &mut Rng::new(seed)).unwrap();
        assert!((e.loss - exact.loss).abs() < 1e-12);
    }
}

#[test]
fn objective_requires_matching_dequantizer() {
    let m = model(TransformFamily::Linear { bins: 4 }, 2, 4, 13, 0.0);
    let deq = Dequantizer::uniform(2, 4);
    let r = train_objective(&m, &deq, Objective::ElboVariational, &[vec![0, 1]], &mut Rng::new(0));
    assert!(matches!(r, Err(Error::Config(_))));
}

#[test]
fn variational_objective_has_dequantizer_gradients() {
    let m = model(TransformFamily::Quadratic { bins: 3 }, 2, 4, 14, 0.5);
    let mut rng = Rng::new(15);
    let deq = Dequantizer::variational(2, 4, &[8], &mut rng);
    let out = train_objective(&m, &deq, Objective::ElboVariational, &[vec![1, 2], vec![3, 0]], &mut rng).unwrap();
    assert_eq!(out.dequant_grads.len(), deq.tensors().len());
    assert!(out.dequant_grads.iter().any(|t| t.data().iter().any(|&v| v != 0.0)));
}
