use super::graph::{CdfKernel, CHUNK};
use super::SubsetFlowModel;
use crate::error::{Error, Result};
use crate::numerics::{Graph, Rng, Tensor};
use crate::transforms::Monotone;

/// A drawn data point with the continuous value it was quantized from.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub x: Vec<usize>,
    pub y: Vec<f64>,
}

impl SubsetFlowModel {
    /// Draws `n` samples with `z ~ Unif(0,1)^D`.
    pub fn sample(&self, n: usize, rng: &mut Rng) -> Result<Vec<Sample>> {
        let z: Vec<Vec<f64>> = (0..n).map(|_| (0..self.dims).map(|_| rng.uniform_open()).collect()).collect();
        self.invert(&z)
    }

    /// Maps latents in `[0, 1]^D` back to data space and quantizes.
    pub fn invert(&self, z: &[Vec<f64>]) -> Result<Vec<Sample>> {
        for zi in z {
            if zi.len() != self.dims || zi.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::domain("latents must be D-vectors in [0, 1]"));
            }
        }
        let mut out = Vec::with_capacity(z.len());
        for chunk in z.chunks(CHUNK) {
            if self.spec.bin_conditioning {
                out.extend(self.invert_bin(chunk)?);
            } else {
                out.extend(self.invert_layerwise(chunk)?);
            }
        }
        Ok(out)
    }

    fn quantize(&self, y: f64) -> usize {
        (y.floor().max(0.0) as usize).min(self.levels - 1)
    }

    /// Outer loop over positions, inner loop over layers from last to first.
    /// Parameters of every layer at position `pos` only depend on the lower
    /// corners of the already-drawn prefix.
    fn invert_bin(&self, z: &[Vec<f64>]) -> Result<Vec<Sample>> {
        let b = z.len();
        let order = self.layers[0].order.clone();
        let mut xs = vec![vec![0usize; self.dims]; b];
        let mut ys = vec![vec![0.0; self.dims]; b];
        for (pos, &d) in order.iter().enumerate() {
            let mut g = Graph::inference();
            let vars = self.bind(&mut g, false);
            let mut lower = self.xs_constant(&mut g, &xs, 0.0)?;
            let mut params: Vec<Tensor> = Vec::with_capacity(self.layers.len());
            for (l, layer) in self.layers.iter().enumerate() {
                let p = self.layer_params(&mut g, &vars, l, lower);
                params.push(g.value(p).clone());
                if l + 1 < self.layers.len() {
                    let kernel = CdfKernel { family: layer.family, q: layer.domain, n: 1 };
                    lower = self.apply_kernel(&mut g, layer, &kernel, p, &[lower])[0];
                }
            }
            for i in 0..b {
                let mut v = z[i][d];
                for (l, layer) in self.layers.iter().enumerate().rev() {
                    let np = layer.family.num_params();
                    let raw = &params[l].row(i)[pos * np..(pos + 1) * np];
                    v = Monotone::build(layer.family, raw, layer.domain).inverse(v)?;
                }
                ys[i][d] = v;
                xs[i][d] = self.quantize(v);
            }
        }
        Ok(xs.into_iter().zip(ys).map(|(x, y)| Sample { x, y }).collect())
    }

    /// Inverts one layer at a time, each dimension by dimension in that
    /// layer's own order. Works for any mix of orders.
    fn invert_layerwise(&self, z: &[Vec<f64>]) -> Result<Vec<Sample>> {
        let b = z.len();
        let mut cur: Vec<Vec<f64>> = z.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let np = layer.family.num_params();
            let mut prev = vec![vec![0.0; self.dims]; b];
            for (pos, &d) in layer.order.iter().enumerate() {
                let mut g = Graph::inference();
                let vars = self.bind(&mut g, false);
                let flat: Vec<f64> = prev.iter().flatten().copied().collect();
                let cond = g.constant(Tensor::matrix(b, self.dims, flat));
                let p = self.layer_params(&mut g, &vars, l, cond);
                for i in 0..b {
                    let raw = &g.value(p).row(i)[pos * np..(pos + 1) * np];
                    prev[i][d] = Monotone::build(layer.family, raw, layer.domain).inverse(cur[i][d])?;
                }
            }
            cur = prev;
        }
        Ok(cur
            .into_iter()
            .map(|y| Sample { x: y.iter().map(|&v| self.quantize(v)).collect(), y })
            .collect())
    }
}
