//! Ordinal datasets: the binary file format and toy generators with known
//! entropies.
//!
//! File layout (little-endian): `"SUBF"`, then `u32` version (1), `N`, `D`,
//! `K`, then `N·D` bytes in sample-major order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{softmax_real, Rng};

const MAGIC: &[u8; 4] = b"SUBF";
const VERSION: u32 = 1;
const HEADER: usize = 20;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    dims: usize,
    levels: usize,
    values: Vec<u8>,
}

impl Dataset {
    pub fn new(dims: usize, levels: usize, rows: &[Vec<usize>]) -> Result<Self> {
        if dims == 0 {
            return Err(Error::Format("dimension must be positive".into()));
        }
        if !(1..=256).contains(&levels) {
            return Err(Error::Format(format!("levels must be in 1..=256, got {levels}")));
        }
        let mut values = Vec::with_capacity(rows.len() * dims);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dims {
                return Err(Error::Format(format!("row {i} has {} values, expected {dims}", row.len())));
            }
            if let Some(v) = row.iter().find(|&&v| v >= levels) {
                return Err(Error::Format(format!("row {i} has value {v} ≥ K = {levels}")));
            }
            values.extend(row.iter().map(|&v| v as u8));
        }
        Ok(Dataset { dims, levels, values })
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dims
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn row(&self, i: usize) -> Vec<usize> {
        self.values[i * self.dims..(i + 1) * self.dims].iter().map(|&v| v as usize).collect()
    }

    pub fn rows(&self) -> Vec<Vec<usize>> {
        (0..self.len()).map(|i| self.row(i)).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER + self.values.len());
        out.extend_from_slice(MAGIC);
        for v in [VERSION, self.len() as u32, self.dims as u32, self.levels as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.values);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER {
            return Err(Error::Format(format!("file too short for header ({} bytes)", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::Format("bad magic; expected SUBF".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
        let (version, n, d, k) = (word(0), word(1) as usize, word(2) as usize, word(3) as usize);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        if d == 0 || !(1..=256).contains(&k) {
            return Err(Error::Format(format!("invalid header: D = {d}, K = {k}")));
        }
        let expected = n.checked_mul(d).and_then(|p| p.checked_add(HEADER));
        if expected != Some(bytes.len()) {
            return Err(Error::Format(format!(
                "payload length mismatch: header says {n}×{d}, file has {} bytes",
                bytes.len()
            )));
        }
        let values = bytes[HEADER..].to_vec();
        if let Some(pos) = values.iter().position(|&v| v as usize >= k) {
            return Err(Error::Format(format!("value {} at offset {pos} is ≥ K = {k}", values[pos])));
        }
        Ok(Dataset { dims: d, levels: k, values })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }
}

/// Toy data families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ToyKind {
    IndependentCategorical,
    MarkovChain,
    QuantizedGaussianMixture,
}

impl std::str::FromStr for ToyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "independent-categorical" => Ok(ToyKind::IndependentCategorical),
            "markov-chain" => Ok(ToyKind::MarkovChain),
            "quantized-gaussian-mixture" => Ok(ToyKind::QuantizedGaussianMixture),
            other => Err(Error::Config(format!("unknown toy kind '{other}'"))),
        }
    }
}

/// A fully specified toy distribution.
///
/// * independent-categorical: dimension `d` is drawn from `softmax(g_d / τ)`
///   with `g_d ~ N(0, I)`.
/// * markov-chain: `x_1` from the stationary distribution of
///   `T = softmax(G / τ)` (rows), then `x_{d+1} ~ T[x_d]`.
/// * quantized-gaussian-mixture: three diagonal Gaussians with means uniform
///   in `[0, K]^D`, floored and clipped to `0..K`.
///
/// `τ = ∞` gives uniform categoricals. `G`, `g` and the mixture are drawn
/// from the generator seed.
#[derive(Clone, Debug)]
pub enum ToyDistribution {
    Independent { probs: Vec<Vec<f64>> },
    Markov { initial: Vec<f64>, transition: Vec<Vec<f64>>, dims: usize },
    GaussianMixture { means: Vec<Vec<f64>>, stds: Vec<Vec<f64>>, levels: usize },
}

fn tempered_softmax(rng: &mut Rng, k: usize, temperature: f64) -> Vec<f64> {
    let logits: Vec<f64> = (0..k).map(|_| rng.normal() / temperature).collect();
    softmax_real(&logits)
}

fn entropy(p: &[f64]) -> f64 {
    p.iter().filter(|&&v| v > 0.0).map(|v| -v * v.ln()).sum()
}

impl ToyDistribution {
    pub fn new(kind: ToyKind, dims: usize, levels: usize, temperature: f64, rng: &mut Rng) -> Result<Self> {
        if dims == 0 || !(2..=256).contains(&levels) {
            return Err(Error::Config(format!("toy data needs D ≥ 1 and K in 2..=256 (D = {dims}, K = {levels})")));
        }
        if !(temperature > 0.0) {
            return Err(Error::Config(format!("temperature must be positive, got {temperature}")));
        }
        Ok(match kind {
            ToyKind::IndependentCategorical => ToyDistribution::Independent {
                probs: (0..dims).map(|_| tempered_softmax(rng, levels, temperature)).collect(),
            },
            ToyKind::MarkovChain => {
                let transition: Vec<Vec<f64>> =
                    (0..levels).map(|_| tempered_softmax(rng, levels, temperature)).collect();
                let initial = stationary(&transition);
                ToyDistribution::Markov { initial, transition, dims }
            }
            ToyKind::QuantizedGaussianMixture => {
                let k = levels as f64;
                let means = (0..3).map(|_| (0..dims).map(|_| k * rng.uniform()).collect()).collect();
                let stds = (0..3).map(|_| (0..dims).map(|_| k * (0.05 + 0.15 * rng.uniform())).collect()).collect();
                ToyDistribution::GaussianMixture { means, stds, levels }
            }
        })
    }

    pub fn dims(&self) -> usize {
        match self {
            ToyDistribution::Independent { probs } => probs.len(),
            ToyDistribution::Markov { dims, .. } => *dims,
            ToyDistribution::GaussianMixture { means, .. } => means[0].len(),
        }
    }

    pub fn levels(&self) -> usize {
        match self {
            ToyDistribution::Independent { probs } => probs[0].len(),
            ToyDistribution::Markov { initial, .. } => initial.len(),
            ToyDistribution::GaussianMixture { levels, .. } => *levels,
        }
    }

    pub fn sample(&self, n: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
        (0..n).map(|_| self.draw(rng)).collect()
    }

    fn draw(&self, rng: &mut Rng) -> Vec<usize> {
        match self {
            ToyDistribution::Independent { probs } => probs.iter().map(|p| rng.categorical(p)).collect(),
            ToyDistribution::Markov { initial, transition, dims } => {
                let mut x = Vec::with_capacity(*dims);
                x.push(rng.categorical(initial));
                for _ in 1..*dims {
                    let prev = *x.last().unwrap();
                    x.push(rng.categorical(&transition[prev]));
                }
                x
            }
            ToyDistribution::GaussianMixture { means, stds, levels } => {
                let c = rng.below(means.len());
                means[c]
                    .iter()
                    .zip(&stds[c])
                    .map(|(m, s)| (m + s * rng.normal()).floor().clamp(0.0, *levels as f64 - 1.0) as usize)
                    .collect()
            }
        }
    }

    /// Joint entropy divided by `D`, in nats, where it has a closed form.
    pub fn entropy_per_dim(&self) -> Option<f64> {
        match self {
            ToyDistribution::Independent { probs } => {
                Some(probs.iter().map(|p| entropy(p)).sum::<f64>() / probs.len() as f64)
            }
            ToyDistribution::Markov { initial, transition, dims } => {
                let row_entropy: Vec<f64> = transition.iter().map(|r| entropy(r)).collect();
                let mut marginal = initial.clone();
                let mut total = entropy(initial);
                for _ in 1..*dims {
                    total += marginal.iter().zip(&row_entropy).map(|(p, h)| p * h).sum::<f64>();
                    marginal = step(&marginal, transition);
                }
                Some(total / *dims as f64)
            }
            ToyDistribution::GaussianMixture { .. } => None,
        }
    }

    /// Exact `log P(x)` where available.
    pub fn log_prob(&self, x: &[usize]) -> Option<f64> {
        match self {
            ToyDistribution::Independent { probs } => Some(x.iter().zip(probs).map(|(&v, p)| p[v].ln()).sum()),
            ToyDistribution::Markov { initial, transition, .. } => {
                let mut lp = initial[x[0]].ln();
                for w in x.windows(2) {
                    lp += transition[w[0]][w[1]].ln();
                }
                Some(lp)
            }
            ToyDistribution::GaussianMixture { .. } => None,
        }
    }
}

fn step(p: &[f64], t: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; p.len()];
    for (i, &pi) in p.iter().enumerate() {
        for (o, &tij) in out.iter_mut().zip(&t[i]) {
            *o += pi * tij;
        }
    }
    out
}

/// Stationary distribution by power iteration; all-positive rows make it unique.
fn stationary(t: &[Vec<f64>]) -> Vec<f64> {
    let k = t.len();
    let mut p = vec![1.0 / k as f64; k];
    for _ in 0..10_000 {
        let next = step(&p, t);
        let delta: f64 = next.iter().zip(&p).map(|(a, b)| (a - b).abs()).sum();
        p = next;
        if delta < 1e-15 {
            break;
        }
    }
    let total: f64 = p.iter().sum();
    p.iter().map(|v| v / total).collect()
}
