use super::graph::CdfKernel;
use super::SubsetFlowModel;
use crate::conditioner::snap_to_bin;
use crate::error::{Error, Result};
use crate::numerics::Graph;
use crate::transforms::Monotone;

/// Every layer's transforms with parameters fixed by one bin.
///
/// Under bin conditioning all points of `B(x)` share their parameters, so the
/// density inside the bin is a product of fixed one-dimensional derivatives.
#[derive(Clone, Debug)]
pub struct BinConditioned {
    x: Vec<usize>,
    levels: usize,
    /// `[layer][dim]`.
    transforms: Vec<Vec<Monotone>>,
}

impl BinConditioned {
    pub fn x(&self) -> &[usize] {
        &self.x
    }

    /// `log p(y)` for `y ∈ B(x)`.
    pub fn log_density(&self, y: &[f64]) -> Result<f64> {
        if y.len() != self.x.len() {
            return Err(Error::contract("point dimension mismatch"));
        }
        let mut total = 0.0;
        for (d, (&yd, &xd)) in y.iter().zip(&self.x).enumerate() {
            if !(0.0..=self.levels as f64).contains(&yd) || snap_to_bin(yd, self.levels) != xd as f64 {
                return Err(Error::domain(format!("coordinate {yd} is outside the bin of {xd}")));
            }
            let mut v = yd;
            let mut acc = 0.0;
            for layer in &self.transforms {
                let f = &layer[d];
                acc += f.log_density(v);
                v = f.cdf(v);
            }
            total += acc;
        }
        Ok(total)
    }
}

impl SubsetFlowModel {
    /// Fixes every layer's parameters at the lower-corner trajectory of `x`.
    pub fn condition_on_bin(&self, x: &[usize]) -> Result<BinConditioned> {
        self.require_exact()?;
        let xs = [x.to_vec()];
        let mut g = Graph::inference();
        let vars = self.bind(&mut g, false);
        let mut lower = self.xs_constant(&mut g, &xs, 0.0)?;
        let mut transforms = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let params = self.layer_params(&mut g, &vars, l, lower);
            let np = layer.family.num_params();
            let row = g.value(params).row(0);
            transforms.push(
                (0..self.dims)
                    .map(|d| {
                        let pos = layer.position_of[d];
                        Monotone::build(layer.family, &row[pos * np..(pos + 1) * np], layer.domain)
                    })
                    .collect(),
            );
            let kernel = CdfKernel { family: layer.family, q: layer.domain, n: 1 };
            lower = self.apply_kernel(&mut g, layer, &kernel, params, &[lower])[0];
        }
        Ok(BinConditioned { x: x.to_vec(), levels: self.levels, transforms })
    }
}
