//! Stacks of autoregressive subset-flow layers.
//!
//! Each layer maps its input space `[0, Q]^D` onto `[0, 1]^D` one dimension at
//! a time with a monotone transform whose parameters come from a masked
//! network. The first layer sees ordinal values (`Q = K`), later layers see the
//! previous layer's latents (`Q = 1`). With bin conditioning and a shared
//! order, every quantization box is carried onto a box and the latent box
//! volume is the exact probability of the box.

mod cached;
mod graph;
mod interpolate;
mod mv_dmol;
mod sample;

pub use cached::BinConditioned;
pub use interpolate::{equal_probability_mix, Interpolation, LatentPoint};
pub use mv_dmol::{MultiDmol, MultiDmolParams};
pub use sample::Sample;

use serde::{Deserialize, Serialize};

use crate::conditioner::{ConditioningMode, MaskedDenseNet};
use crate::error::{Error, Result};
use crate::numerics::{Graph, Rng, Tensor, Var};
use crate::transforms::TransformFamily;

/// Autoregressive order of a layer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrderKind {
    /// Dimensions in storage order.
    #[default]
    Raster,
    /// Storage order reversed.
    Rotated,
}

impl OrderKind {
    /// `order[pos]` is the dimension handled at autoregressive position `pos`.
    pub fn permutation(self, dims: usize) -> Vec<usize> {
        match self {
            OrderKind::Raster => (0..dims).collect(),
            OrderKind::Rotated => (0..dims).rev().collect(),
        }
    }
}

fn default_hidden() -> Vec<usize> {
    vec![128, 128]
}

/// One layer of a model description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    #[serde(flatten)]
    pub family: TransformFamily,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub order: OrderKind,
}

/// Model description independent of data shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub layers: Vec<LayerSpec>,
    pub bin_conditioning: bool,
}

impl ModelSpec {
    pub fn mode(&self) -> ConditioningMode {
        if self.bin_conditioning {
            ConditioningMode::BinLowerCorner
        } else {
            ConditioningMode::ExactValue
        }
    }

    /// Shape and capability checks that do not need data.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("model needs at least one layer".into()));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            let size = match layer.family {
                TransformFamily::Linear { bins } | TransformFamily::Quadratic { bins } => bins,
                TransformFamily::Mol { mixtures } => mixtures,
            };
            if size == 0 {
                return Err(Error::Config(format!("layer {l}: bins/mixtures must be positive")));
            }
            if layer.hidden.iter().any(|&h| h == 0) {
                return Err(Error::Config(format!("layer {l}: hidden widths must be positive")));
            }
        }
        if self.bin_conditioning && !self.shared_order() {
            return Err(Error::Config(
                "bin conditioning requires every layer to use the same autoregressive order".into(),
            ));
        }
        Ok(())
    }

    pub fn shared_order(&self) -> bool {
        self.layers.windows(2).all(|w| w[0].order == w[1].order)
    }

    /// Exact likelihood needs bin conditioning and one shared order.
    pub fn exact_capable(&self) -> bool {
        self.bin_conditioning && self.shared_order()
    }
}

/// Boxes in latent space, one interval per dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct Hyperrectangle {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Hyperrectangle {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return Err(Error::contract("hyperrectangle needs lower ≤ upper in every dimension"));
        }
        Ok(Hyperrectangle { lower, upper })
    }

    /// The quantization box `[x, x+1)^D`.
    pub fn unit_box(x: &[usize]) -> Self {
        Hyperrectangle {
            lower: x.iter().map(|&v| v as f64).collect(),
            upper: x.iter().map(|&v| v as f64 + 1.0).collect(),
        }
    }

    pub fn dims(&self) -> usize {
        self.lower.len()
    }

    pub fn log_volume(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(l, u)| (u - l).ln()).sum()
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        point.len() == self.dims()
            && point.iter().zip(self.lower.iter().zip(&self.upper)).all(|(p, (l, u))| l <= p && p <= u)
    }
}

/// One trained layer.
#[derive(Clone, Debug)]
pub struct FlowLayer {
    pub family: TransformFamily,
    pub net: MaskedDenseNet,
    order: Vec<usize>,
    position_of: Vec<usize>,
    domain: f64,
}

impl FlowLayer {
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Upper end of the layer's input domain.
    pub fn domain(&self) -> f64 {
        self.domain
    }
}

/// Output-layer bias giving a near-uniform initial transform.
pub fn initial_bias(family: TransformFamily, q: f64) -> Vec<f64> {
    match family {
        TransformFamily::Linear { bins } => vec![0.0; bins],
        TransformFamily::Quadratic { bins } => vec![0.0; 2 * bins + 1],
        TransformFamily::Mol { mixtures } => {
            let m = mixtures as f64;
            let mut bias = vec![0.0; mixtures];
            bias.extend((0..mixtures).map(|i| q * (i as f64 + 0.5) / m - 0.5));
            bias.extend(std::iter::repeat_n((q / m).ln(), mixtures));
            bias
        }
    }
}

#[derive(Clone, Debug)]
pub struct SubsetFlowModel {
    spec: ModelSpec,
    dims: usize,
    levels: usize,
    layers: Vec<FlowLayer>,
}

impl SubsetFlowModel {
    pub fn new(spec: &ModelSpec, dims: usize, levels: usize, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        if dims == 0 {
            return Err(Error::Config("data dimension must be positive".into()));
        }
        if !(2..=256).contains(&levels) {
            return Err(Error::Config(format!("levels must be in 2..=256, got {levels}")));
        }
        let layers = spec
            .layers
            .iter()
            .enumerate()
            .map(|(l, ls)| {
                let domain = if l == 0 { levels as f64 } else { 1.0 };
                let p = ls.family.num_params();
                let bias = initial_bias(ls.family, domain);
                let net = MaskedDenseNet::made(dims, p, &ls.hidden, &bias, rng);
                let order = ls.order.permutation(dims);
                let mut position_of = vec![0; dims];
                for (pos, &d) in order.iter().enumerate() {
                    position_of[d] = pos;
                }
                FlowLayer { family: ls.family, net, order, position_of, domain }
            })
            .collect();
        Ok(SubsetFlowModel { spec: spec.clone(), dims, levels, layers })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn layers(&self) -> &[FlowLayer] {
        &self.layers
    }

    pub fn mode(&self) -> ConditioningMode {
        self.spec.mode()
    }

    pub fn is_exact_capable(&self) -> bool {
        self.spec.exact_capable()
    }

    pub fn require_exact(&self) -> Result<()> {
        if self.is_exact_capable() {
            Ok(())
        } else {
            Err(Error::Unsupported(
                "exact likelihood requires bin conditioning and a shared autoregressive order \
                 across layers; use a dequantization bound instead"
                    .into(),
            ))
        }
    }

    /// All parameter tensors, layer by layer.
    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| l.net.tensors()).collect()
    }

    pub fn tensor_names(&self) -> Vec<String> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.net.tensor_names().into_iter().map(move |n| format!("layer{i}.{n}")))
            .collect()
    }

    pub fn set_tensors(&mut self, tensors: Vec<Tensor>) -> Result<()> {
        let total: usize = self.layers.iter().map(|l| l.net.num_tensors()).sum();
        if tensors.len() != total {
            return Err(Error::contract(format!("model has {total} tensors, got {}", tensors.len())));
        }
        let mut it = tensors.into_iter();
        for layer in &mut self.layers {
            let part: Vec<Tensor> = it.by_ref().take(layer.net.num_tensors()).collect();
            layer.net.set_tensors(part)?;
        }
        Ok(())
    }

    /// Adds `scale · N(0, 1)` noise to every parameter.
    pub fn perturb(&mut self, scale: f64, rng: &mut Rng) {
        let noisy: Vec<Tensor> = self.tensors().iter().map(|t| t.map(|v| v + scale * rng.normal())).collect();
        self.set_tensors(noisy).expect("same shapes");
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Puts every parameter on `g`, trainable or constant.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.tensors()
            .into_iter()
            .map(|t| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) })
            .collect()
    }

    fn layer_vars<'a>(&self, vars: &'a [Var], l: usize) -> &'a [Var] {
        let start: usize = self.layers[..l].iter().map(|x| x.net.num_tensors()).sum();
        &vars[start..start + self.layers[l].net.num_tensors()]
    }

    pub(crate) fn check_x(&self, x: &[usize]) -> Result<()> {
        if x.len() != self.dims {
            return Err(Error::contract(format!("expected {} dimensions, got {}", self.dims, x.len())));
        }
        if let Some(v) = x.iter().find(|&&v| v >= self.levels) {
            return Err(Error::domain(format!("value {v} outside 0..{}", self.levels)));
        }
        Ok(())
    }

    pub(crate) fn check_y(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.dims {
            return Err(Error::contract(format!("expected {} dimensions, got {}", self.dims, y.len())));
        }
        let k = self.levels as f64;
        if let Some(v) = y.iter().find(|v| !(0.0..=k).contains(*v)) {
            return Err(Error::domain(format!("point coordinate {v} outside [0, {k}]")));
        }
        Ok(())
    }

    /// `log P(x)` for a batch, by propagating box corners through every layer.
    pub fn exact_log_likelihoods(&self, xs: &[Vec<usize>]) -> Result<Vec<f64>> {
        self.require_exact()?;
        let mut out = Vec::with_capacity(xs.len());
        for chunk in xs.chunks(graph::CHUNK) {
            let mut g = Graph::inference();
            let vars = self.bind(&mut g, false);
            let ll = self.exact_log_likelihood_graph(&mut g, &vars, chunk)?;
            out.extend_from_slice(g.value(ll).data());
        }
        if out.iter().any(|v| *v == f64::NEG_INFINITY) {
            log::warn!("degenerate latent box: zero-width interval gives log P = -inf");
        }
        Ok(out)
    }

    pub fn exact_log_likelihood(&self, x: &[usize]) -> Result<f64> {
        Ok(self.exact_log_likelihoods(&[x.to_vec()])?[0])
    }

    /// Latent boxes `f(B(x))` for a batch.
    pub fn latent_boxes(&self, xs: &[Vec<usize>]) -> Result<Vec<Hyperrectangle>> {
        self.require_exact()?;
        let mut out = Vec::with_capacity(xs.len());
        for chunk in xs.chunks(graph::CHUNK) {
            let mut g = Graph::inference();
            let vars = self.bind(&mut g, false);
            let (lo, hi) = self.propagate_boxes(&mut g, &vars, chunk)?;
            for b in 0..chunk.len() {
                out.push(Hyperrectangle {
                    lower: g.value(lo).row(b).to_vec(),
                    upper: g.value(hi).row(b).to_vec(),
                });
            }
        }
        Ok(out)
    }

    pub fn latent_box(&self, x: &[usize]) -> Result<Hyperrectangle> {
        Ok(self.latent_boxes(&[x.to_vec()])?.remove(0))
    }

    /// `log p(y)` for a batch of continuous points in `[0, K]^D`.
    pub fn log_densities(&self, ys: &[Vec<f64>]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(ys.len());
        for chunk in ys.chunks(graph::CHUNK) {
            let mut g = Graph::inference();
            let vars = self.bind(&mut g, false);
            let y = self.points_constant(&mut g, chunk)?;
            let (_, ld) = self.push_graph(&mut g, &vars, y)?;
            out.extend_from_slice(g.value(ld).data());
        }
        Ok(out)
    }

    pub fn log_density(&self, y: &[f64]) -> Result<f64> {
        Ok(self.log_densities(&[y.to_vec()])?[0])
    }

    /// Image of a point under the whole flow.
    pub fn push_forward(&self, y: &[f64]) -> Result<Vec<f64>> {
        let mut g = Graph::inference();
        let vars = self.bind(&mut g, false);
        let yv = self.points_constant(&mut g, &[y.to_vec()])?;
        let (z, _) = self.push_graph(&mut g, &vars, yv)?;
        Ok(g.value(z).data().to_vec())
    }

    pub(crate) fn points_constant(&self, g: &mut Graph, ys: &[Vec<f64>]) -> Result<Var> {
        let mut flat = Vec::with_capacity(ys.len() * self.dims);
        for y in ys {
            self.check_y(y)?;
            flat.extend_from_slice(y);
        }
        Ok(g.constant(Tensor::matrix(ys.len(), self.dims, flat)))
    }
}

#[cfg(test)]
mod tests;
