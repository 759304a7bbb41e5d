//! Dequantization bounds on the discrete likelihood.
//!
//! A dequantizer `q(y|x)` places continuous noise inside `B(x)`; the flow's
//! density then gives the ELBO `E_q[log p(y) − log q(y|x)]` and its
//! importance-weighted tightening. With an exact-capable model the gap to
//! `log P(x)` can be measured directly.

mod objective;

pub use objective::{train_objective, Objective, ObjectiveOutput};

use serde::{Deserialize, Serialize};

use crate::conditioner::{normalize_input, MaskedDenseNet};
use crate::error::{Error, Result};
use crate::flow::{BinConditioned, SubsetFlowModel};
use crate::numerics::{log_sum_exp, Graph, Real, Rng, RowKernel, Tensor, Var};

/// Keeps dequantization noise off the bin boundary.
pub const BOUNDARY_EPS: f64 = 1e-12;

const MIN_NOISE_SCALE: f64 = 1e-3;

/// Which noise distribution fills each bin.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DequantKind {
    Uniform,
    Variational,
}

/// `q(y|x)` over `B(x)`. The variational family is an independent truncated
/// logistic on `[0, 1)` per dimension whose location and scale come from a
/// dense network of `x`.
#[derive(Clone, Debug)]
pub struct Dequantizer {
    kind: DequantKind,
    dims: usize,
    levels: usize,
    net: Option<MaskedDenseNet>,
}

/// Truncated logistic draw on `[0, 1)` from raw `(a, b)` and a uniform `eps`.
/// Returns the offset inside the bin and its log-density.
pub fn truncated_logistic<T: Real>(a: T, b: T, eps: f64) -> (T, T) {
    let mu = a.sigmoid();
    let s = b.exp();
    let s = if s.val() < MIN_NOISE_SCALE { T::cst(MIN_NOISE_SCALE) } else { s };
    let lo = (-mu / s).sigmoid();
    let hi = ((T::cst(1.0) - mu) / s).sigmoid();
    let mass = hi - lo;
    let c = lo + mass * T::cst(eps);
    // 1 − c without cancellation: σ(−(1−μ)/s) + (1 − ε)·mass.
    let one_minus_c = (-(T::cst(1.0) - mu) / s).sigmoid() + mass * T::cst(1.0 - eps);
    let t = c.ln() - one_minus_c.ln();
    let mut u = mu + s * t;
    let mut t_used = t;
    if u.val() < BOUNDARY_EPS || u.val() > 1.0 - BOUNDARY_EPS {
        u = T::cst(u.val().clamp(BOUNDARY_EPS, 1.0 - BOUNDARY_EPS));
        t_used = (u - mu) / s;
    }
    let log_q = t_used.ln_sigmoid() + (-t_used).ln_sigmoid() - s.ln() - mass.ln();
    (u, log_q)
}

/// `[a_1..a_D | b_1..b_D | x_1..x_D | ε_1..ε_D] → [y_1..y_D | Σ log q]`.
struct NoiseKernel {
    dims: usize,
}

impl RowKernel for NoiseKernel {
    fn n_out(&self) -> usize {
        self.dims + 1
    }

    fn eval<T: Real>(&self, row: &[T]) -> Vec<T> {
        let d = self.dims;
        let mut out = Vec::with_capacity(d + 1);
        let mut log_q = T::cst(0.0);
        for i in 0..d {
            let (u, lq) = truncated_logistic(row[i], row[d + i], row[3 * d + i].val());
            out.push(row[2 * d + i] + u);
            log_q = log_q + lq;
        }
        out.push(log_q);
        out
    }
}

impl Dequantizer {
    pub fn uniform(dims: usize, levels: usize) -> Self {
        Dequantizer { kind: DequantKind::Uniform, dims, levels, net: None }
    }

    /// Starts close to uniform: centred location and a wide scale.
    pub fn variational(dims: usize, levels: usize, hidden: &[usize], rng: &mut Rng) -> Self {
        let mut bias = vec![0.0; dims];
        bias.extend(std::iter::repeat_n(2.0, dims));
        let net = MaskedDenseNet::dense(dims, 2 * dims, hidden, &bias, rng);
        Dequantizer { kind: DequantKind::Variational, dims, levels, net: Some(net) }
    }

    pub fn kind(&self) -> DequantKind {
        self.kind
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.net.as_ref().map(|n| n.tensors()).unwrap_or_default()
    }

    pub fn tensor_names(&self) -> Vec<String> {
        self.net
            .as_ref()
            .map(|n| n.tensor_names().into_iter().map(|s| format!("dequant.{s}")).collect())
            .unwrap_or_default()
    }

    pub fn set_tensors(&mut self, tensors: Vec<Tensor>) -> Result<()> {
        match &mut self.net {
            Some(net) => net.set_tensors(tensors),
            None if tensors.is_empty() => Ok(()),
            None => Err(Error::contract("uniform dequantizer has no parameters")),
        }
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.tensors()
            .into_iter()
            .map(|t| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) })
            .collect()
    }

    fn net_input(&self, xs: &[Vec<usize>]) -> Tensor {
        let k = self.levels as f64;
        let flat = xs.iter().flatten().map(|&v| normalize_input(v as f64 + 0.5, k)).collect();
        Tensor::matrix(xs.len(), self.dims, flat)
    }

    /// Draws `y ~ q(·|x)` for a batch given uniforms `eps` (`B × D`).
    /// Returns `y` (`B × D`) and `log q(y|x)` (`B × 1`) on the graph.
    pub fn sample_graph(&self, g: &mut Graph, vars: &[Var], xs: &[Vec<usize>], eps: &[Vec<f64>]) -> (Var, Var) {
        let b = xs.len();
        let x_flat: Vec<f64> = xs.iter().flatten().map(|&v| v as f64).collect();
        let e_flat: Vec<f64> = eps.iter().flatten().copied().collect();
        match &self.net {
            None => {
                let y = x_flat
                    .iter()
                    .zip(&e_flat)
                    .map(|(x, e)| x + e.clamp(BOUNDARY_EPS, 1.0 - BOUNDARY_EPS))
                    .collect();
                let y = g.constant(Tensor::matrix(b, self.dims, y));
                let log_q = g.constant(Tensor::zeros(&[b, 1]));
                (y, log_q)
            }
            Some(net) => {
                let input = g.constant(self.net_input(xs));
                let raw = net.forward(g, vars, input);
                let x = g.constant(Tensor::matrix(b, self.dims, x_flat));
                let e = g.constant(Tensor::matrix(b, self.dims, e_flat));
                let row = g.concat_cols(&[raw, x, e]);
                let out = g.row_map(row, &NoiseKernel { dims: self.dims });
                let y = g.slice_cols(out, 0, self.dims);
                let log_q = g.slice_cols(out, self.dims, self.dims + 1);
                (y, log_q)
            }
        }
    }

    /// Per-dimension `(a, b)` for one `x`; `None` for the uniform variant.
    fn raw_for(&self, x: &[usize]) -> Option<Vec<f64>> {
        let net = self.net.as_ref()?;
        let mut g = Graph::inference();
        let vars = self.bind(&mut g, false);
        let input = g.constant(self.net_input(&[x.to_vec()]));
        let out = net.forward(&mut g, &vars, input);
        Some(g.value(out).data().to_vec())
    }

    /// `k` draws from `q(·|x)`, draw `j` using the substream `rng.split(j)`.
    pub fn draws(&self, x: &[usize], k: usize, rng: &Rng) -> Vec<(Vec<f64>, f64)> {
        draws_with(x, self.raw_for(x).as_deref(), k, rng)
    }
}

fn draws_with(x: &[usize], raw: Option<&[f64]>, k: usize, rng: &Rng) -> Vec<(Vec<f64>, f64)> {
    let dims = x.len();
    (0..k)
        .map(|j| {
            let mut r = rng.split(j as u64);
            let mut y = Vec::with_capacity(dims);
            let mut log_q = 0.0;
            for (d, &xd) in x.iter().enumerate() {
                let eps = r.uniform();
                match raw {
                    None => y.push(xd as f64 + eps.clamp(BOUNDARY_EPS, 1.0 - BOUNDARY_EPS)),
                    Some(raw) => {
                        let (u, lq) = truncated_logistic(raw[d], raw[dims + d], eps);
                        y.push(xd as f64 + u);
                        log_q += lq;
                    }
                }
            }
            (y, log_q)
        })
        .collect()
}

/// Everything about one data point that does not change between trials.
pub struct PreparedPoint<'a> {
    model: &'a SubsetFlowModel,
    x: Vec<usize>,
    bin: Option<BinConditioned>,
    noise: Option<Vec<f64>>,
}

impl<'a> PreparedPoint<'a> {
    pub fn new(model: &'a SubsetFlowModel, deq: &Dequantizer, x: &[usize]) -> Result<Self> {
        model.check_x(x)?;
        if deq.dims != model.dims() {
            return Err(Error::contract("dequantizer and model dimensions differ"));
        }
        let bin = if model.is_exact_capable() { Some(model.condition_on_bin(x)?) } else { None };
        Ok(PreparedPoint { model, x: x.to_vec(), bin, noise: deq.raw_for(x) })
    }

    /// `log p(y_j) − log q(y_j|x)` for the `k` draws of one trial.
    pub fn log_weights(&self, k: usize, trial: &Rng) -> Result<Vec<f64>> {
        let draws = draws_with(&self.x, self.noise.as_deref(), k, trial);
        let log_p: Vec<f64> = match &self.bin {
            Some(cond) => draws.iter().map(|(y, _)| cond.log_density(y)).collect::<Result<_>>()?,
            None => {
                let ys: Vec<Vec<f64>> = draws.iter().map(|(y, _)| y.clone()).collect();
                self.model.log_densities(&ys)?
            }
        };
        Ok(log_p.iter().zip(&draws).map(|(lp, (_, lq))| lp - lq).collect())
    }

    /// One IWBO trial; consumes one word of `rng`.
    pub fn iwbo(&self, k: usize, rng: &mut Rng) -> Result<DequantEstimate> {
        if k == 0 {
            return Err(Error::contract("IWBO needs k ≥ 1"));
        }
        let seed = rng.next_u64();
        let w = self.log_weights(k, &rng.split(seed))?;
        let value = if k == 1 { w[0] } else { log_sum_exp(&w)? - (k as f64).ln() };
        Ok(DequantEstimate { value, estimator: Estimator::Iwbo(k), samples: k, seed })
    }
}

/// Which quantity an estimate refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Estimator {
    Elbo,
    Iwbo(usize),
    Exact,
}

impl Estimator {
    pub fn name(&self) -> &'static str {
        match self {
            Estimator::Elbo => "elbo",
            Estimator::Iwbo(_) => "iwbo",
            Estimator::Exact => "exact",
        }
    }

    /// Importance samples per estimate; `0` for the exact likelihood.
    pub fn k(&self) -> usize {
        match self {
            Estimator::Elbo => 1,
            Estimator::Iwbo(k) => *k,
            Estimator::Exact => 0,
        }
    }
}

/// One log-likelihood estimate for one data point, in nats.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DequantEstimate {
    pub value: f64,
    pub estimator: Estimator,
    pub samples: usize,
    pub seed: u64,
}

impl DequantEstimate {
    pub fn bits_per_dim(&self, dims: usize) -> f64 {
        bits_per_dim(self.value, dims)
    }
}

/// `−ll / (D ln 2)`.
pub fn bits_per_dim(log_likelihood: f64, dims: usize) -> f64 {
    -log_likelihood / (dims as f64 * std::f64::consts::LN_2)
}

/// Single-sample ELBO estimate. Consumes one word of `rng`.
pub fn elbo(model: &SubsetFlowModel, deq: &Dequantizer, x: &[usize], rng: &mut Rng) -> Result<DequantEstimate> {
    let est = PreparedPoint::new(model, deq, x)?.iwbo(1, rng)?;
    Ok(DequantEstimate { estimator: Estimator::Elbo, ..est })
}

/// Importance-weighted bound with `k` samples; `k = 1` reproduces [`elbo`]
/// for the same `rng` state.
pub fn iwbo(
    model: &SubsetFlowModel,
    deq: &Dequantizer,
    x: &[usize],
    k: usize,
    rng: &mut Rng,
) -> Result<DequantEstimate> {
    PreparedPoint::new(model, deq, x)?.iwbo(k, rng)
}

/// Exact log-likelihood minus the mean of `samples` ELBO draws (nats).
pub fn dequant_gap(
    model: &SubsetFlowModel,
    deq: &Dequantizer,
    x: &[usize],
    samples: usize,
    rng: &mut Rng,
) -> Result<f64> {
    model.require_exact()?;
    if samples == 0 {
        return Err(Error::contract("gap needs at least one sample"));
    }
    let exact = model.exact_log_likelihood(x)?;
    let point = PreparedPoint::new(model, deq, x)?;
    let mut total = 0.0;
    for _ in 0..samples {
        total += point.iwbo(1, rng)?.value;
    }
    Ok(exact - total / samples as f64)
}

/// Estimate of `estimator` for `x`, averaged over `trials` independent draws.
pub fn estimate(
    model: &SubsetFlowModel,
    deq: &Dequantizer,
    x: &[usize],
    estimator: Estimator,
    trials: usize,
    rng: &mut Rng,
) -> Result<f64> {
    match estimator {
        Estimator::Exact => model.exact_log_likelihood(x),
        Estimator::Elbo | Estimator::Iwbo(_) => {
            let trials = trials.max(1);
            let point = PreparedPoint::new(model, deq, x)?;
            let mut total = 0.0;
            for _ in 0..trials {
                total += point.iwbo(estimator.k(), rng)?.value;
            }
            Ok(total / trials as f64)
        }
    }
}

#[cfg(test)]
mod tests;
