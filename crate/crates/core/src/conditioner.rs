//! Autoregressive parameter networks.
//!
//! [`MaskedDenseNet`] is a MADE-style dense network over `D` positions whose
//! output block for position `d` (of `P` raw transform parameters) only sees
//! input positions `< d`. Callers permute dimensions into positional order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Graph, Rng, Tensor, Var};

/// What the network sees for each already-transformed dimension.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConditioningMode {
    /// The exact running value.
    ExactValue,
    /// The lower corner of the value's quantization bin.
    BinLowerCorner,
}

/// Affine map of `[0, q]` onto `[−1, 1]`.
pub fn normalize_input(raw: f64, q: f64) -> f64 {
    2.0 * raw / q - 1.0
}

pub fn denormalize_input(v: f64, q: f64) -> f64 {
    (v + 1.0) * q / 2.0
}

/// Lower corner of the unit bin containing `y ∈ [0, levels]`.
pub fn snap_to_bin(y: f64, levels: usize) -> f64 {
    y.floor().clamp(0.0, levels as f64 - 1.0)
}

#[derive(Clone, Debug)]
pub struct MaskedDenseNet {
    inputs: usize,
    block: usize,
    blocks: usize,
    hidden: Vec<usize>,
    weights: Vec<Tensor>,
    biases: Vec<Tensor>,
    masks: Vec<Tensor>,
}

impl MaskedDenseNet {
    /// Autoregressive net over `dims` positions with `params_per_dim` outputs
    /// each. Hidden unit `k` of every layer gets degree `(k mod (D−1)) + 1`;
    /// a hidden unit sees inputs of degree `≤` its own, an output block of
    /// position `d` (1-based) sees hidden units of degree `< d`.
    ///
    /// `output_bias` (length `params_per_dim`) initializes every block's bias;
    /// output weights start at zero so the initial transform is input-independent.
    pub fn made(
        dims: usize,
        params_per_dim: usize,
        hidden: &[usize],
        output_bias: &[f64],
        rng: &mut Rng,
    ) -> Self {
        assert!(dims > 0 && params_per_dim > 0);
        assert_eq!(output_bias.len(), params_per_dim);
        let input_deg: Vec<usize> = (1..=dims).collect();
        let hidden_deg: Vec<Vec<usize>> = hidden
            .iter()
            .map(|&h| (0..h).map(|k| if dims > 1 { k % (dims - 1) + 1 } else { dims }).collect())
            .collect();
        let output_deg: Vec<usize> =
            (0..dims * params_per_dim).map(|o| o / params_per_dim + 1).collect();

        let mut masks = Vec::new();
        let mut prev = &input_deg;
        for deg in &hidden_deg {
            masks.push(mask(prev, deg, |i, h| h >= i));
            prev = deg;
        }
        masks.push(mask(prev, &output_deg, |h, d| d > h));

        let bias: Vec<f64> = (0..dims).flat_map(|_| output_bias.iter().copied()).collect();
        Self::with_masks(dims, params_per_dim, dims, hidden, masks, bias, rng)
    }

    /// Fully connected net `inputs → outputs` (no masking).
    pub fn dense(inputs: usize, outputs: usize, hidden: &[usize], output_bias: &[f64], rng: &mut Rng) -> Self {
        assert_eq!(output_bias.len(), outputs);
        let mut widths = vec![inputs];
        widths.extend_from_slice(hidden);
        widths.push(outputs);
        let masks = widths.windows(2).map(|w| Tensor::full(&[w[0], w[1]], 1.0)).collect();
        Self::with_masks(inputs, outputs, 1, hidden, masks, output_bias.to_vec(), rng)
    }

    fn with_masks(
        inputs: usize,
        block: usize,
        blocks: usize,
        hidden: &[usize],
        masks: Vec<Tensor>,
        output_bias: Vec<f64>,
        rng: &mut Rng,
    ) -> Self {
        let mut widths = vec![inputs];
        widths.extend_from_slice(hidden);
        widths.push(block * blocks);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let last = widths.len() - 2;
        for (l, w) in widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            if l == last {
                weights.push(Tensor::zeros(&[fan_in, fan_out]));
                biases.push(Tensor::matrix(1, fan_out, output_bias.clone()));
            } else {
                let bound = 1.0 / (fan_in as f64).sqrt();
                let data = (0..fan_in * fan_out).map(|_| bound * (2.0 * rng.uniform() - 1.0)).collect();
                let mut t = Tensor::matrix(fan_in, fan_out, data);
                for (v, m) in t.data_mut().iter_mut().zip(masks[l].data()) {
                    *v *= m;
                }
                weights.push(t);
                biases.push(Tensor::zeros(&[1, fan_out]));
            }
        }
        MaskedDenseNet { inputs, block, blocks, hidden: hidden.to_vec(), weights, biases, masks }
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.block * self.blocks
    }

    /// Outputs per position (`P`).
    pub fn block(&self) -> usize {
        self.block
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    /// Parameter tensors in a fixed order: `w0, b0, w1, b1, …`.
    pub fn tensors(&self) -> Vec<&Tensor> {
        self.weights.iter().zip(&self.biases).flat_map(|(w, b)| [w, b]).collect()
    }

    pub fn tensor_names(&self) -> Vec<String> {
        (0..self.weights.len()).flat_map(|l| [format!("w{l}"), format!("b{l}")]).collect()
    }

    pub fn set_tensors(&mut self, tensors: Vec<Tensor>) -> Result<()> {
        if tensors.len() != 2 * self.weights.len() {
            return Err(Error::contract("wrong number of network tensors"));
        }
        let mut it = tensors.into_iter();
        for l in 0..self.weights.len() {
            let w = it.next().unwrap();
            let b = it.next().unwrap();
            if w.shape() != self.weights[l].shape() || b.shape() != self.biases[l].shape() {
                return Err(Error::contract(format!("network tensor shape mismatch in layer {l}")));
            }
            self.weights[l] = w;
            self.biases[l] = b;
        }
        Ok(())
    }

    pub fn num_tensors(&self) -> usize {
        2 * self.weights.len()
    }

    /// Forward pass on a graph. `vars` are this net's leaves in [`tensors`]
    /// order; `input` is `B × inputs` (already normalized).
    pub fn forward(&self, g: &mut Graph, vars: &[Var], input: Var) -> Var {
        let mut h = input;
        let n = self.weights.len();
        for l in 0..n {
            let mask = g.constant(self.masks[l].clone());
            let w = g.mul(vars[2 * l], mask);
            h = g.matmul(h, w);
            h = g.add_row(h, vars[2 * l + 1]);
            if l + 1 < n {
                h = g.tanh(h);
            }
        }
        h
    }

    /// Plain evaluation on one positional input vector, snapping to bin lower
    /// corners first in [`ConditioningMode::BinLowerCorner`]. Returns one
    /// parameter block per position.
    pub fn params_for(&self, input: &[f64], mode: ConditioningMode, q: f64) -> Result<Vec<Vec<f64>>> {
        if input.len() != self.inputs {
            return Err(Error::contract(format!(
                "conditioner expects {} inputs, got {}",
                self.inputs,
                input.len()
            )));
        }
        let row: Vec<f64> = input
            .iter()
            .map(|&y| {
                let y = match mode {
                    ConditioningMode::ExactValue => y,
                    ConditioningMode::BinLowerCorner => snap_to_bin(y, q as usize),
                };
                normalize_input(y, q)
            })
            .collect();
        let mut g = Graph::inference();
        let vars: Vec<Var> = self.tensors().into_iter().map(|t| g.constant(t.clone())).collect();
        let x = g.constant(Tensor::matrix(1, self.inputs, row));
        let out = self.forward(&mut g, &vars, x);
        Ok(g.value(out).data().chunks(self.block).map(|c| c.to_vec()).collect())
    }
}

fn mask(from: &[usize], to: &[usize], connect: impl Fn(usize, usize) -> bool) -> Tensor {
    let data = from
        .iter()
        .flat_map(|&a| to.iter().map(move |&b| (a, b)))
        .map(|(a, b)| if connect(a, b) { 1.0 } else { 0.0 })
        .collect();
    Tensor::matrix(from.len(), to.len(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn randomized(net: &mut MaskedDenseNet, rng: &mut Rng) {
        let ts: Vec<Tensor> =
            net.tensors().iter().map(|t| t.map(|_| rng.normal())).collect();
        net.set_tensors(ts).unwrap();
    }

    #[test]
    fn single_dimension_is_constant() {
        let mut rng = Rng::new(1);
        let mut net = MaskedDenseNet::made(1, 3, &[8, 8], &[0.0; 3], &mut rng);
        randomized(&mut net, &mut rng);
        let a = net.params_for(&[0.3], ConditioningMode::ExactValue, 4.0).unwrap();
        let b = net.params_for(&[3.7], ConditioningMode::ExactValue, 4.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gradient_probe_respects_order() {
        let mut rng = Rng::new(2);
        let dims = 5;
        let p = 2;
        let mut net = MaskedDenseNet::made(dims, p, &[16, 16], &[0.0; 2], &mut rng);
        randomized(&mut net, &mut rng);
        for out_pos in 0..dims {
            for j in 0..p {
                let mut g = Graph::new();
                let vars: Vec<Var> = net.tensors().into_iter().map(|t| g.constant(t.clone())).collect();
                let row: Vec<f64> = (0..dims).map(|_| rng.normal()).collect();
                let x = g.param(Tensor::matrix(1, dims, row));
                let out = net.forward(&mut g, &vars, x);
                let picked = g.pick(out, &[out_pos * p + j]);
                let s = g.sum(picked);
                let grad = g.grad(s, &[x]).unwrap();
                for e in out_pos..dims {
                    assert_eq!(grad[0].data()[e], 0.0, "output {out_pos} sees input {e}");
                }
                if out_pos > 0 {
                    assert!(grad[0].data()[..out_pos].iter().any(|&v| v != 0.0));
                }
            }
        }
    }

    #[test]
    fn bin_mode_is_constant_within_bins() {
        let mut rng = Rng::new(3);
        let mut net = MaskedDenseNet::made(3, 4, &[12], &[0.0; 4], &mut rng);
        randomized(&mut net, &mut rng);
        let a = net.params_for(&[1.1, 2.9, 0.0], ConditioningMode::BinLowerCorner, 4.0).unwrap();
        let b = net.params_for(&[1.8, 2.2, 0.99], ConditioningMode::BinLowerCorner, 4.0).unwrap();
        assert_eq!(a, b);
        let c = net.params_for(&[1.8, 2.2, 0.99], ConditioningMode::ExactValue, 4.0).unwrap();
        assert_ne!(a[1], c[1]);
    }

    #[test]
    fn output_layer_starts_at_bias() {
        let mut rng = Rng::new(4);
        let net = MaskedDenseNet::made(3, 2, &[8], &[0.5, -1.0], &mut rng);
        let out = net.params_for(&[0.2, 1.7, 3.3], ConditioningMode::ExactValue, 4.0).unwrap();
        assert!(out.iter().all(|b| b == &vec![0.5, -1.0]));
        assert_eq!(net.outputs(), 6);
    }

    #[test]
    fn normalization_is_affine() {
        assert_eq!(normalize_input(0.0, 8.0), -1.0);
        assert_eq!(normalize_input(8.0, 8.0), 1.0);
        assert_eq!(normalize_input(4.0, 8.0), 0.0);
        for y in [0.0, 0.3, 2.5, 7.99] {
            assert!((denormalize_input(normalize_input(y, 8.0), 8.0) - y).abs() < 1e-12);
            let shifted = normalize_input(y + 1.0, 8.0) - normalize_input(y, 8.0);
            assert!((shifted - 2.0 / 8.0).abs() < 1e-12);
        }
    }

    #[test]
    fn wrong_input_width_is_rejected() {
        let mut rng = Rng::new(5);
        let net = MaskedDenseNet::made(3, 2, &[8], &[0.0; 2], &mut rng);
        assert!(net.params_for(&[0.0; 2], ConditioningMode::ExactValue, 4.0).is_err());
    }
}
