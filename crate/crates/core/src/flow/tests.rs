use super::*;
use crate::transforms::Monotone;

fn spec(families: &[TransformFamily], bin: bool) -> ModelSpec {
    ModelSpec {
        layers: families
            .iter()
            .map(|&family| LayerSpec { family, hidden: vec![16], order: OrderKind::Raster })
            .collect(),
        bin_conditioning: bin,
    }
}

fn random_model(families: &[TransformFamily], dims: usize, levels: usize, seed: u64) -> SubsetFlowModel {
    let mut rng = Rng::new(seed);
    let mut m = SubsetFlowModel::new(&spec(families, true), dims, levels, &mut rng).unwrap();
    m.perturb(0.5, &mut rng);
    m
}

fn all_outcomes(dims: usize, levels: usize) -> Vec<Vec<usize>> {
    let total = levels.pow(dims as u32);
    (0..total)
        .map(|mut i| {
            let mut x = vec![0; dims];
            for v in x.iter_mut().rev() {
                *v = i % levels;
                i /= levels;
            }
            x
        })
        .collect()
}

#[test]
fn uniform_model_likelihood() {
    let mut rng = Rng::new(0);
    let m = SubsetFlowModel::new(&spec(&[TransformFamily::Linear { bins: 4 }], true), 2, 4, &mut rng).unwrap();
    for x in all_outcomes(2, 4) {
        let ll = m.exact_log_likelihood(&x).unwrap();
        assert!((ll - 2.0 * 0.25f64.ln()).abs() < 1e-14);
    }
    let ld = m.log_density(&[0.3, 3.9]).unwrap();
    assert!((ld + 2.0 * 4f64.ln()).abs() < 1e-14);
}

#[test]
fn normalizes_for_each_family() {
    let families = [
        vec![TransformFamily::Quadratic { bins: 5 }],
        vec![TransformFamily::Mol { mixtures: 3 }],
        vec![TransformFamily::Linear { bins: 4 }, TransformFamily::Quadratic { bins: 3 }],
    ];
    for (i, fam) in families.iter().enumerate() {
        let m = random_model(fam, 3, 4, 10 + i as u64);
        let lls = m.exact_log_likelihoods(&all_outcomes(3, 4)).unwrap();
        let total: f64 = lls.iter().map(|v| v.exp()).sum();
        assert!((total - 1.0).abs() < 1e-10, "{fam:?}: {total}");
        assert!(lls.iter().all(|&v| v <= 0.0 && v.is_finite()));
    }
}

#[test]
fn single_layer_matches_per_dimension_differences() {
    let fam = TransformFamily::Quadratic { bins: 4 };
    let m = random_model(&[fam], 3, 5, 3);
    let x = vec![4, 0, 2];
    let params = m.layers()[0]
        .net
        .params_for(&x.iter().map(|&v| v as f64).collect::<Vec<_>>(), ConditioningMode::BinLowerCorner, 5.0)
        .unwrap();
    let direct: f64 = (0..3)
        .map(|d| {
            let f = Monotone::build(fam, &params[d], 5.0);
            (f.forward(x[d] as f64 + 1.0).unwrap() - f.forward(x[d] as f64).unwrap()).ln()
        })
        .sum();
    assert!((m.exact_log_likelihood(&x).unwrap() - direct).abs() < 1e-12);
}

#[test]
fn linear_density_is_constant_per_bin() {
    let m = random_model(&[TransformFamily::Linear { bins: 4 }], 3, 4, 4);
    let mut rng = Rng::new(5);
    for x in all_outcomes(3, 4).into_iter().step_by(5) {
        let exact = m.exact_log_likelihood(&x).unwrap();
        for _ in 0..5 {
            let y: Vec<f64> = x.iter().map(|&v| v as f64 + rng.uniform()).collect();
            assert!((m.log_density(&y).unwrap() - exact).abs() < 1e-12);
        }
    }
}

#[test]
fn pushed_points_land_inside_latent_box() {
    let m = random_model(&[TransformFamily::Mol { mixtures: 2 }, TransformFamily::Quadratic { bins: 3 }], 3, 4, 6);
    let mut rng = Rng::new(7);
    for _ in 0..50 {
        let x: Vec<usize> = (0..3).map(|_| rng.below(4)).collect();
        let bx = m.latent_box(&x).unwrap();
        assert!(bx.lower.iter().chain(&bx.upper).all(|v| (0.0..=1.0).contains(v)));
        let y: Vec<f64> = x.iter().map(|&v| v as f64 + rng.uniform_open()).collect();
        assert!(bx.contains(&m.push_forward(&y).unwrap()));
    }
}

#[test]
fn uniform_model_inverts_centre() {
    let mut rng = Rng::new(8);
    let m = SubsetFlowModel::new(&spec(&[TransformFamily::Linear { bins: 4 }], true), 3, 4, &mut rng).unwrap();
    let s = m.invert(&[vec![0.5; 3]]).unwrap();
    assert_eq!(s[0].x, vec![2, 2, 2]);
    assert!(s[0].y.iter().all(|&v| (v - 2.0).abs() < 1e-12));
}

#[test]
fn sampling_inverts_the_forward_map() {
    let m = random_model(&[TransformFamily::Quadratic { bins: 4 }, TransformFamily::Mol { mixtures: 3 }], 3, 4, 9);
    let mut rng = Rng::new(10);
    for s in m.sample(30, &mut rng).unwrap() {
        let bx = m.latent_box(&s.x).unwrap();
        let z = m.push_forward(&s.y).unwrap();
        assert!(bx.contains(&z));
        assert!(s.y.iter().zip(&s.x).all(|(y, &x)| y.floor() as usize == x || *y == 4.0));
    }
}

#[test]
fn layerwise_inversion_round_trips() {
    let mut rng = Rng::new(11);
    let mut s = spec(&[TransformFamily::Quadratic { bins: 4 }, TransformFamily::Linear { bins: 3 }], false);
    s.layers[1].order = OrderKind::Rotated;
    let mut m = SubsetFlowModel::new(&s, 3, 4, &mut rng).unwrap();
    m.perturb(0.5, &mut rng);
    let z: Vec<Vec<f64>> = (0..20).map(|_| (0..3).map(|_| rng.uniform_open()).collect()).collect();
    for (zi, smp) in z.iter().zip(m.invert(&z).unwrap()) {
        let back = m.push_forward(&smp.y).unwrap();
        for (a, b) in back.iter().zip(zi) {
            assert!((a - b).abs() < 1e-9);
        }
    }
    assert!(matches!(m.exact_log_likelihood(&[0, 1, 2]), Err(Error::Unsupported(_))));
}

#[test]
fn bin_conditioning_requires_shared_order() {
    let mut s = spec(&[TransformFamily::Linear { bins: 4 }, TransformFamily::Linear { bins: 4 }], true);
    s.layers[1].order = OrderKind::Rotated;
    assert!(matches!(SubsetFlowModel::new(&s, 2, 4, &mut Rng::new(0)), Err(Error::Config(_))));
}

#[test]
fn out_of_domain_inputs_are_rejected() {
    let m = random_model(&[TransformFamily::Linear { bins: 4 }], 2, 4, 12);
    assert!(m.exact_log_likelihood(&[0, 4]).is_err());
    assert!(m.exact_log_likelihood(&[0]).is_err());
    assert!(m.log_density(&[0.0, 4.5]).is_err());
}

#[test]
fn interpolation_endpoints_reconstruct() {
    let m = random_model(&[TransformFamily::Quadratic { bins: 4 }, TransformFamily::Quadratic { bins: 3 }], 4, 4, 13);
    let mut rng = Rng::new(14);
    let (a, b) = (vec![0, 3, 1, 2], vec![3, 3, 0, 1]);
    let path = m.interpolate(&a, &b, 6, &mut rng).unwrap();
    assert_eq!(path.samples.len(), 6);
    assert_eq!(path.samples[0].x, a);
    assert_eq!(path.samples[5].x, b);
    assert_eq!(path.weights[0], 1.0);
    assert_eq!(path.weights[5], 0.0);
    let two = m.interpolate(&a, &b, 2, &mut rng).unwrap();
    assert_eq!((two.samples[0].x.clone(), two.samples[1].x.clone()), (a, b));
}

#[test]
fn mix_formula_endpoints() {
    let h = [0.3, -1.2];
    assert_eq!(equal_probability_mix(&h, &h, 1.0), h.to_vec());
    assert_eq!(equal_probability_mix(&h, &h, 0.0), h.to_vec());
    let mid = equal_probability_mix(&h, &h, 0.5);
    assert!((mid[0] - 0.3 * 2f64.sqrt()).abs() < 1e-15);
}

#[test]
fn tensor_names_are_unique() {
    let m = random_model(&[TransformFamily::Linear { bins: 4 }, TransformFamily::Linear { bins: 2 }], 2, 4, 15);
    let names = m.tensor_names();
    let mut sorted = names.clone();
    sorted.sort();
    sorted.dedup();
    assert_eq!(sorted.len(), names.len());
    assert_eq!(names.len(), m.tensors().len());
}

#[test]
fn cached_bin_density_matches_graph() {
    let m = random_model(&[TransformFamily::Mol { mixtures: 3 }, TransformFamily::Quadratic { bins: 4 }], 3, 4, 16);
    let mut rng = Rng::new(17);
    for _ in 0..20 {
        let x: Vec<usize> = (0..3).map(|_| rng.below(4)).collect();
        let cond = m.condition_on_bin(&x).unwrap();
        let y: Vec<f64> = x.iter().map(|&v| v as f64 + rng.uniform_open()).collect();
        assert!((cond.log_density(&y).unwrap() - m.log_density(&y).unwrap()).abs() < 1e-12);
    }
    let cond = m.condition_on_bin(&[0, 0, 0]).unwrap();
    assert!(cond.log_density(&[1.5, 0.5, 0.5]).is_err());
}
