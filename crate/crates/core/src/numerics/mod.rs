//! Dense tensors, reverse-mode gradients, Adam, and seeded random streams.

pub mod ad;
mod optim;
mod rng;
mod tape;
mod tensor;

pub use ad::{Ad, Real};
pub use optim::{LrSchedule, OptimState};
pub use rng::{Rng, RngState};
pub use tape::{Graph, RowKernel, Var};
pub use tensor::{matmul, Tensor};

use crate::error::{Error, Result};

/// Overflow-safe `log Σ exp(v)`.
pub fn log_sum_exp(values: &[f64]) -> Result<f64> {
    let max = values
        .iter()
        .copied()
        .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))))
        .ok_or_else(|| Error::contract("log_sum_exp of an empty list"))?;
    if max == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    if max.is_infinite() {
        return Ok(max);
    }
    let s: f64 = values.iter().map(|v| (v - max).exp()).sum();
    Ok(max + s.ln())
}

/// `log Σ exp` over [`Real`] values, shifted by the largest value.
pub fn log_sum_exp_real<T: Real>(values: &[T]) -> T {
    let max = values.iter().map(|v| v.val()).fold(f64::NEG_INFINITY, f64::max);
    let shift = T::cst(max);
    let mut s = T::cst(0.0);
    for &v in values {
        s = s + (v - shift).exp();
    }
    shift + s.ln()
}

/// Softmax over [`Real`] values.
pub fn softmax_real<T: Real>(logits: &[T]) -> Vec<T> {
    let lse = log_sum_exp_real(logits);
    logits.iter().map(|&l| (l - lse).exp()).collect()
}
