//! Subset flows for ordinal discrete data.
//!
//! An autoregressive flow whose per-dimension transforms are monotone CDFs maps
//! each quantization box `[x, x+1)^D` onto a box in the unit cube when the
//! transform parameters are conditioned on bin lower corners. The volume of
//! that latent box is the exact probability of `x`. Alongside the exact
//! likelihood this crate provides the usual dequantization bounds (ELBO,
//! IWBO) so the gap between them can be measured.

pub mod checkpoint;
pub mod conditioner;
pub mod config;
pub mod data;
pub mod dequant;
pub mod error;
pub mod flow;
pub mod numerics;
pub mod oracle;
pub mod report;
pub mod train;
pub mod transforms;

pub use error::{Error, Result};
