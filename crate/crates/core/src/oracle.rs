//! Brute-force reference computations.
//!
//! Each function here re-derives a quantity the fast code paths produce, using
//! only the public model API or closed-form formulas of its own.

use crate::dequant::{train_objective, Dequantizer, Objective};
use crate::error::{Error, Result};
use crate::flow::{MultiDmolParams, SubsetFlowModel};
use crate::numerics::{Rng, Tensor};

/// Cap on the number of outcomes an enumeration may visit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EnumerationBudget {
    pub max_outcomes: u64,
}

impl Default for EnumerationBudget {
    fn default() -> Self {
        EnumerationBudget { max_outcomes: 1 << 20 }
    }
}

impl EnumerationBudget {
    /// Number of outcomes `K^D`, or a refusal if it exceeds the budget.
    pub fn outcomes(&self, dims: usize, levels: usize) -> Result<u64> {
        let mut total: u64 = 1;
        for _ in 0..dims {
            total = total.checked_mul(levels as u64).filter(|&t| t <= self.max_outcomes).ok_or_else(|| {
                Error::Infeasible(format!(
                    "{levels}^{dims} outcomes exceed the enumeration budget of {}",
                    self.max_outcomes
                ))
            })?;
        }
        Ok(total)
    }
}

/// All of `{0..levels}^dims` in lexicographic order (last dimension fastest).
pub fn outcomes(dims: usize, levels: usize) -> impl Iterator<Item = Vec<usize>> {
    let total = (levels as u64).pow(dims as u32);
    (0..total).map(move |mut i| {
        let mut x = vec![0; dims];
        for v in x.iter_mut().rev() {
            *v = (i % levels as u64) as usize;
            i /= levels as u64;
        }
        x
    })
}

/// `Σ_x P(x)` over every outcome.
pub fn enumerate_normalization(model: &SubsetFlowModel, budget: EnumerationBudget) -> Result<f64> {
    budget.outcomes(model.dims(), model.levels())?;
    let all: Vec<Vec<usize>> = outcomes(model.dims(), model.levels()).collect();
    let mut total = 0.0;
    for chunk in all.chunks(4096) {
        for ll in model.exact_log_likelihoods(chunk)? {
            total += ll.exp();
        }
    }
    Ok(total)
}

fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Discretized logistic mass of `x` on `{0..levels}` with bin edges at
/// `x ± ½` and absorbing end bins, evaluated in the tail that avoids
/// cancellation.
pub fn dlogistic_mass(x: usize, mean: f64, scale: f64, levels: usize) -> f64 {
    let lo = if x == 0 { f64::NEG_INFINITY } else { (x as f64 - 0.5 - mean) / scale };
    let hi = if x + 1 == levels { f64::INFINITY } else { (x as f64 + 0.5 - mean) / scale };
    if lo > 0.0 {
        logistic(-lo) - logistic(-hi)
    } else {
        logistic(hi) - logistic(lo)
    }
}

/// The three-channel discretized mixture of logistics evaluated directly as
/// a mixture of products, without any autoregressive rewrite:
/// `Σ_m π_m Π_c DLogistic(x_c | μ_{c,m}(x), s_{c,m})`.
pub fn joint_mv_dmol(params: &MultiDmolParams, x: [usize; 3]) -> f64 {
    let m = params.logits.len();
    let max = params.logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = params.logits.iter().map(|l| (l - max).exp()).collect();
    let norm: f64 = weights.iter().sum();
    let (x1, x2) = (x[0] as f64, x[1] as f64);
    let mut total = 0.0;
    for k in 0..m {
        let means = [
            params.means[0][k],
            params.means[1][k] + params.coeffs[0][k] * x1,
            params.means[2][k] + params.coeffs[1][k] * x1 + params.coeffs[2][k] * x2,
        ];
        let mut prod = weights[k] / norm;
        for c in 0..3 {
            let s = params.log_scales[c][k].exp().max(crate::transforms::MIN_SCALE);
            prod *= dlogistic_mass(x[c], means[c], s, params.levels);
        }
        total += prod;
    }
    total
}

/// Central-difference gradient of `f` at `point` with step `h`.
pub fn finite_diff_gradient(mut f: impl FnMut(&[f64]) -> f64, point: &[f64], h: f64) -> Vec<f64> {
    assert!(h > 0.0, "step must be positive");
    let mut p = point.to_vec();
    (0..point.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let up = f(&p);
            p[i] = orig - h;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Midpoint-rule integral of the model density over `B(x)` with `grid`
/// points per dimension.
pub fn quadrature_bin_mass(model: &SubsetFlowModel, x: &[usize], grid: usize) -> Result<f64> {
    let dims = model.dims();
    if grid == 0 || grid > 32 {
        return Err(Error::Infeasible(format!("quadrature grid {grid} outside 1..=32 per dimension")));
    }
    let points = (grid as u64).checked_pow(dims as u32).filter(|&p| p <= 1 << 20).ok_or_else(|| {
        Error::Infeasible(format!("{grid}^{dims} quadrature points exceed 2^20"))
    })?;
    if x.len() != dims {
        return Err(Error::contract("bin dimension mismatch"));
    }
    let step = 1.0 / grid as f64;
    let ys: Vec<Vec<f64>> = outcomes(dims, grid)
        .map(|cell| cell.iter().zip(x).map(|(&c, &xd)| xd as f64 + (c as f64 + 0.5) * step).collect())
        .collect();
    debug_assert_eq!(ys.len() as u64, points);
    let mut total = 0.0;
    for chunk in ys.chunks(4096) {
        for ld in model.log_densities(chunk)? {
            total += ld.exp();
        }
    }
    Ok(total * step.powi(dims as i32))
}

/// Reverse-mode gradient of the mean exact NLL versus central differences.
#[derive(Clone, Debug)]
pub struct GradientCheck {
    pub parameters: usize,
    /// `‖analytic − numeric‖ / ‖numeric‖`.
    pub relative_error: f64,
}

pub fn gradient_check(model: &SubsetFlowModel, batch: &[Vec<usize>], h: f64) -> Result<GradientCheck> {
    let deq = Dequantizer::uniform(model.dims(), model.levels());
    let analytic: Vec<f64> = train_objective(model, &deq, Objective::Exact, batch, &mut Rng::new(0))?
        .model_grads
        .iter()
        .flat_map(|t| t.data().to_vec())
        .collect();
    let shapes: Vec<Vec<usize>> = model.tensors().iter().map(|t| t.shape().to_vec()).collect();
    let flat: Vec<f64> = model.tensors().iter().flat_map(|t| t.data().to_vec()).collect();
    let mut probe = model.clone();
    let mut failure = None;
    let numeric = finite_diff_gradient(
        |theta| {
            let mut offset = 0;
            let tensors = shapes
                .iter()
                .map(|s| {
                    let n: usize = s.iter().product();
                    let t = Tensor::new(s.clone(), theta[offset..offset + n].to_vec()).expect("shape");
                    offset += n;
                    t
                })
                .collect();
            probe.set_tensors(tensors).expect("same shapes");
            match probe.exact_log_likelihoods(batch) {
                Ok(lls) => -lls.iter().sum::<f64>() / lls.len() as f64,
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            }
        },
        &flat,
        h,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let diff: f64 = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    Ok(GradientCheck { parameters: flat.len(), relative_error: diff / norm.max(f64::MIN_POSITIVE) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{LayerSpec, ModelSpec, MultiDmol, OrderKind};
    use crate::transforms::TransformFamily;

    fn model(families: &[TransformFamily], dims: usize, levels: usize, bin: bool, seed: u64) -> SubsetFlowModel {
        let spec = ModelSpec {
            layers: families
                .iter()
                .map(|&family| LayerSpec { family, hidden: vec![12], order: OrderKind::Raster })
                .collect(),
            bin_conditioning: bin,
        };
        let mut rng = Rng::new(seed);
        let mut m = SubsetFlowModel::new(&spec, dims, levels, &mut rng).unwrap();
        m.perturb(0.5, &mut rng);
        m
    }

    #[test]
    fn budget_refuses_large_spaces() {
        let b = EnumerationBudget::default();
        assert_eq!(b.outcomes(10, 4).unwrap(), 1 << 20);
        assert!(matches!(b.outcomes(11, 4), Err(Error::Infeasible(_))));
        assert!(b.outcomes(3, 256).is_err());
    }

    #[test]
    fn lexicographic_order() {
        let all: Vec<Vec<usize>> = outcomes(2, 3).collect();
        assert_eq!(all[0], vec![0, 0]);
        assert_eq!(all[1], vec![0, 1]);
        assert_eq!(all[8], vec![2, 2]);
    }

    #[test]
    fn uniform_model_normalizes_exactly() {
        let spec = ModelSpec {
            layers: vec![LayerSpec { family: TransformFamily::Linear { bins: 4 }, hidden: vec![4], order: OrderKind::Raster }],
            bin_conditioning: true,
        };
        let m = SubsetFlowModel::new(&spec, 2, 4, &mut Rng::new(0)).unwrap();
        assert_eq!(enumerate_normalization(&m, EnumerationBudget::default()).unwrap(), 1.0);
    }

    #[test]
    fn random_models_normalize() {
        let quad = model(&[TransformFamily::Quadratic { bins: 6 }], 3, 4, true, 1);
        assert!((enumerate_normalization(&quad, EnumerationBudget::default()).unwrap() - 1.0).abs() < 1e-8);
        let two = model(&[TransformFamily::Mol { mixtures: 3 }, TransformFamily::Quadratic { bins: 4 }], 2, 8, true, 2);
        assert!((enumerate_normalization(&two, EnumerationBudget::default()).unwrap() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn finite_differences_of_square_norm() {
        let g = finite_diff_gradient(|p| p.iter().map(|v| v * v).sum(), &[1.0, 2.0], 1e-5);
        assert!((g[0] - 2.0).abs() < 1e-8 && (g[1] - 4.0).abs() < 1e-8);
    }

    #[test]
    fn joint_formula_special_cases() {
        let p = MultiDmolParams {
            logits: vec![0.0],
            means: vec![vec![1.0], vec![4.0], vec![6.0]],
            log_scales: vec![vec![0.2], vec![-0.3], vec![0.0]],
            coeffs: vec![vec![0.0]; 3],
            levels: 8,
        };
        let direct = dlogistic_mass(2, 1.0, 0.2f64.exp(), 8)
            * dlogistic_mass(5, 4.0, (-0.3f64).exp(), 8)
            * dlogistic_mass(7, 6.0, 1.0, 8);
        assert!((joint_mv_dmol(&p, [2, 5, 7]) - direct).abs() < 1e-15);

        let sym = MultiDmolParams {
            logits: vec![0.3, -0.4],
            means: vec![vec![2.0, 5.0]; 3],
            log_scales: vec![vec![0.1, -0.2]; 3],
            coeffs: vec![vec![0.0; 2]; 3],
            levels: 8,
        };
        let a = joint_mv_dmol(&sym, [1, 4, 6]);
        let b = joint_mv_dmol(&sym, [6, 1, 4]);
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn joint_formula_agrees_with_flow() {
        let mut rng = Rng::new(3);
        let m = 3;
        let vecs = |rng: &mut Rng, f: &dyn Fn(&mut Rng) -> f64| -> Vec<Vec<f64>> {
            (0..3).map(|_| (0..m).map(|_| f(rng)).collect()).collect()
        };
        let p = MultiDmolParams {
            logits: (0..m).map(|_| rng.normal()).collect(),
            means: vecs(&mut rng, &|r| 8.0 * r.uniform()),
            log_scales: vecs(&mut rng, &|r| 0.5 * r.normal()),
            coeffs: vecs(&mut rng, &|r| 2.0 * r.uniform() - 1.0),
            levels: 8,
        };
        let flow = MultiDmol::new(p.clone()).unwrap();
        for x in outcomes(3, 8) {
            let x = [x[0], x[1], x[2]];
            let direct = joint_mv_dmol(&p, x);
            let ar = flow.log_prob(&x).unwrap().exp();
            assert!((ar - direct).abs() / direct < 1e-9, "{x:?}: {ar} vs {direct}");
        }
    }

    #[test]
    fn exact_gradient_matches_finite_differences() {
        let m = model(&[TransformFamily::Quadratic { bins: 3 }, TransformFamily::Mol { mixtures: 2 }], 2, 3, true, 4);
        let batch = vec![vec![0, 2], vec![1, 1], vec![2, 0]];
        let check = gradient_check(&m, &batch, 1e-5).unwrap();
        assert!(check.relative_error < 1e-4, "{}", check.relative_error);
    }

    #[test]
    fn quadrature_matches_exact_mass() {
        let m = model(&[TransformFamily::Quadratic { bins: 4 }], 2, 3, true, 5);
        let x = [1, 2];
        let exact = m.exact_log_likelihood(&x).unwrap().exp();
        let quad = quadrature_bin_mass(&m, &x, 32).unwrap();
        assert!((quad - exact).abs() / exact < 1e-3);
        assert!(quadrature_bin_mass(&m, &x, 33).is_err());
    }

    #[test]
    fn quadrature_normalizes_without_bin_conditioning() {
        let m = model(&[TransformFamily::Quadratic { bins: 4 }], 2, 3, false, 6);
        let total: f64 = outcomes(2, 3).map(|x| quadrature_bin_mass(&m, &x, 32).unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-3);
    }
}
