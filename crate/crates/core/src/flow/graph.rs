//! Batched forward computations recorded on a [`Graph`].
//!
//! Values travel as `B × D` matrices in storage (dimension) order. Each layer
//! gathers them into its autoregressive order, runs the masked network, and
//! applies a per-row transform kernel to `(B·D)` rows of `[params | inputs]`.

use super::{FlowLayer, SubsetFlowModel};
use crate::conditioner::snap_to_bin;
use crate::error::{Error, Result};
use crate::numerics::{Graph, Real, RowKernel, Tensor, Var};
use crate::transforms::{Monotone, TransformFamily};

/// Rows per graph in the plain batch APIs.
pub(crate) const CHUNK: usize = 1024;

/// Interior CDF values are kept in `[CDF_CLAMP, 1 − CDF_CLAMP]`.
pub(crate) const CDF_CLAMP: f64 = 1e-12;

/// `f(y)` for box corners: domain edges map to exactly 0 and 1, interior
/// points are clamped away from them so saturated tails keep a positive width.
fn clamped_cdf<T: Real>(f: &Monotone<T>, y: T, q: f64) -> T {
    let z = f.cdf(y);
    let yv = y.val();
    if yv <= 0.0 || yv >= q {
        z
    } else if z.val() < CDF_CLAMP {
        T::cst(CDF_CLAMP)
    } else if z.val() > 1.0 - CDF_CLAMP {
        T::cst(1.0 - CDF_CLAMP)
    } else {
        z
    }
}

/// `[raw | v_1..v_n] → [f(v_1)..f(v_n)]`, clamped as in [`CDF_CLAMP`].
pub(crate) struct CdfKernel {
    pub family: TransformFamily,
    pub q: f64,
    pub n: usize,
}

impl RowKernel for CdfKernel {
    fn n_out(&self) -> usize {
        self.n
    }

    fn eval<T: Real>(&self, row: &[T]) -> Vec<T> {
        let p = self.family.num_params();
        let f = Monotone::build(self.family, &row[..p], self.q);
        row[p..].iter().map(|&v| clamped_cdf(&f, v, self.q)).collect()
    }
}

/// `[raw | lo | hi] → [log(f(hi) − f(lo))]`.
pub(crate) struct MassKernel {
    pub family: TransformFamily,
    pub q: f64,
}

impl RowKernel for MassKernel {
    fn n_out(&self) -> usize {
        1
    }

    fn eval<T: Real>(&self, row: &[T]) -> Vec<T> {
        let p = self.family.num_params();
        let f = Monotone::build(self.family, &row[..p], self.q);
        vec![f.log_interval_mass(row[p], row[p + 1])]
    }
}

/// `[raw | y (| lower)] → [f(y), log f'(y) (, f(lower))]`.
pub(crate) struct PointKernel {
    pub family: TransformFamily,
    pub q: f64,
    pub carry_lower: bool,
}

impl RowKernel for PointKernel {
    fn n_out(&self) -> usize {
        if self.carry_lower {
            3
        } else {
            2
        }
    }

    fn eval<T: Real>(&self, row: &[T]) -> Vec<T> {
        let p = self.family.num_params();
        let f = Monotone::build(self.family, &row[..p], self.q);
        let y = row[p];
        let mut out = vec![f.cdf(y), f.log_density(y)];
        if self.carry_lower {
            out.push(clamped_cdf(&f, row[p + 1], self.q));
        }
        out
    }
}

impl SubsetFlowModel {
    /// Raw transform parameters of layer `l` given conditioning values
    /// (`B × D`, dimension order). Output is `B × (D·P)` in positional order.
    pub(crate) fn layer_params(&self, g: &mut Graph, vars: &[Var], l: usize, cond: Var) -> Var {
        let layer = &self.layers[l];
        let rows = g.value(cond).dims2().0;
        let positional = g.gather_cols(cond, &layer.order);
        let scaled = g.scale(positional, 2.0 / layer.domain);
        let shift = g.constant(Tensor::full(&[1, self.dims], -1.0));
        let input = g.add_row(scaled, shift);
        let out = layer.net.forward(g, self.layer_vars(vars, l), input);
        debug_assert_eq!(g.value(out).dims2(), (rows, self.dims * layer.family.num_params()));
        out
    }

    /// Runs `kernel` on every (row, dimension) pair; returns its outputs as
    /// `B × D` matrices in dimension order.
    pub(crate) fn apply_kernel<K: RowKernel>(
        &self,
        g: &mut Graph,
        layer: &FlowLayer,
        kernel: &K,
        params: Var,
        inputs: &[Var],
    ) -> Vec<Var> {
        let rows = g.value(params).dims2().0;
        let d = self.dims;
        let p = layer.family.num_params();
        let mut cols = vec![g.reshape(params, &[rows * d, p])];
        for &inp in inputs {
            let positional = g.gather_cols(inp, &layer.order);
            cols.push(g.reshape(positional, &[rows * d, 1]));
        }
        let cat = g.concat_cols(&cols);
        let out = g.row_map(cat, kernel);
        let n = kernel.n_out();
        let flat = g.reshape(out, &[rows, d * n]);
        (0..n)
            .map(|j| {
                let idx: Vec<usize> = layer.position_of.iter().map(|&pos| pos * n + j).collect();
                g.gather_cols(flat, &idx)
            })
            .collect()
    }

    pub(crate) fn xs_constant(&self, g: &mut Graph, xs: &[Vec<usize>], offset: f64) -> Result<Var> {
        let mut flat = Vec::with_capacity(xs.len() * self.dims);
        for x in xs {
            self.check_x(x)?;
            flat.extend(x.iter().map(|&v| v as f64 + offset));
        }
        Ok(g.constant(Tensor::matrix(xs.len(), self.dims, flat)))
    }

    /// Lower and upper latent corners of each `B(x)` after the last layer.
    pub(crate) fn propagate_boxes(
        &self,
        g: &mut Graph,
        vars: &[Var],
        xs: &[Vec<usize>],
    ) -> Result<(Var, Var)> {
        self.boxes_after(g, vars, xs, self.layers.len())
    }

    /// Corners of each `B(x)` after the first `n` layers.
    fn boxes_after(&self, g: &mut Graph, vars: &[Var], xs: &[Vec<usize>], n: usize) -> Result<(Var, Var)> {
        self.require_exact()?;
        let mut lower = self.xs_constant(g, xs, 0.0)?;
        let mut upper = self.xs_constant(g, xs, 1.0)?;
        for (l, layer) in self.layers.iter().enumerate().take(n) {
            let params = self.layer_params(g, vars, l, lower);
            let kernel = CdfKernel { family: layer.family, q: layer.domain, n: 2 };
            let out = self.apply_kernel(g, layer, &kernel, params, &[lower, upper]);
            lower = out[0];
            upper = out[1];
        }
        Ok((lower, upper))
    }

    /// `B × 1` exact log-likelihoods; differentiable in the parameters.
    pub fn exact_log_likelihood_graph(&self, g: &mut Graph, vars: &[Var], xs: &[Vec<usize>]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::contract("empty batch"));
        }
        // The last layer's box width comes from its interval mass directly.
        let last = self.layers.len() - 1;
        let (lower, upper) = self.boxes_after(g, vars, xs, last)?;
        let layer = &self.layers[last];
        let params = self.layer_params(g, vars, last, lower);
        let kernel = MassKernel { family: layer.family, q: layer.domain };
        let logw = self.apply_kernel(g, layer, &kernel, params, &[lower, upper])[0];
        Ok(g.sum_cols(logw))
    }

    /// Pushes points `y` (`B × D`, in `[0, K]`) through the flow. Returns the
    /// final latents and `B × 1` log-densities; differentiable in both the
    /// parameters and `y`.
    pub fn push_graph(&self, g: &mut Graph, vars: &[Var], y: Var) -> Result<(Var, Var)> {
        let (rows, cols) = g.value(y).dims2();
        if cols != self.dims || rows == 0 {
            return Err(Error::contract(format!("points must be B × {}, got {rows} × {cols}", self.dims)));
        }
        let k = self.levels;
        let mut lower = if self.spec.bin_conditioning {
            let snapped = g.value(y).map(|v| snap_to_bin(v, k));
            Some(g.constant(snapped))
        } else {
            None
        };
        let mut point = y;
        let mut logdet: Option<Var> = None;
        for (l, layer) in self.layers.iter().enumerate() {
            let cond = lower.unwrap_or(point);
            let params = self.layer_params(g, vars, l, cond);
            let kernel = PointKernel { family: layer.family, q: layer.domain, carry_lower: lower.is_some() };
            let mut inputs = vec![point];
            inputs.extend(lower);
            let out = self.apply_kernel(g, layer, &kernel, params, &inputs);
            point = out[0];
            logdet = Some(match logdet {
                Some(acc) => g.add(acc, out[1]),
                None => out[1],
            });
            lower = out.get(2).copied();
        }
        let total = g.sum_cols(logdet.expect("at least one layer"));
        Ok((point, total))
    }
}
