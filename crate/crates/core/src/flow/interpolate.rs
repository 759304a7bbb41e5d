use statrs::distribution::{ContinuousCDF, Normal};

use super::{Sample, SubsetFlowModel};
use crate::error::{Error, Result};
use crate::numerics::Rng;

/// A latent point and its per-dimension Gaussianization `h = Φ⁻¹(z)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentPoint {
    pub z: Vec<f64>,
    pub h: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Interpolation {
    /// Mixing weight of the first endpoint at each step, from 1 down to 0.
    pub weights: Vec<f64>,
    pub latents: Vec<LatentPoint>,
    pub samples: Vec<Sample>,
}

/// `(w·h0 + (1−w)·h1) / √(w² + (1−w)²)`: keeps standard-normal inputs
/// standard normal.
pub fn equal_probability_mix(h0: &[f64], h1: &[f64], w: f64) -> Vec<f64> {
    let norm = (w * w + (1.0 - w) * (1.0 - w)).sqrt();
    h0.iter().zip(h1).map(|(a, b)| (w * a + (1.0 - w) * b) / norm).collect()
}

fn std_normal() -> Normal {
    Normal::standard()
}

impl SubsetFlowModel {
    /// Uniform draw inside the latent box of `x`, strictly inside `(0, 1)^D`.
    pub fn latent_sample(&self, x: &[usize], rng: &mut Rng) -> Result<LatentPoint> {
        let bx = self.latent_box(x)?;
        let n = std_normal();
        let z: Vec<f64> = bx
            .lower
            .iter()
            .zip(&bx.upper)
            .map(|(l, u)| (l + rng.uniform_open() * (u - l)).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0))
            .collect();
        let h = z.iter().map(|&v| n.inverse_cdf(v)).collect();
        Ok(LatentPoint { z, h })
    }

    /// Path between two data points through Gaussianized latent space with
    /// `steps ≥ 2` equally spaced weights; the first and last entries
    /// reconstruct `x_a` and `x_b`.
    pub fn interpolate(&self, x_a: &[usize], x_b: &[usize], steps: usize, rng: &mut Rng) -> Result<Interpolation> {
        self.require_exact()?;
        if steps < 2 {
            return Err(Error::contract("interpolation needs at least two steps"));
        }
        let a = self.latent_sample(x_a, rng)?;
        let b = self.latent_sample(x_b, rng)?;
        let n = std_normal();
        let mut weights = Vec::with_capacity(steps);
        let mut latents = Vec::with_capacity(steps);
        for i in 0..steps {
            let w = 1.0 - i as f64 / (steps - 1) as f64;
            let point = if i == 0 {
                a.clone()
            } else if i + 1 == steps {
                b.clone()
            } else {
                let h = equal_probability_mix(&a.h, &b.h, w);
                let z = h.iter().map(|&v| n.cdf(v)).collect();
                LatentPoint { z, h }
            };
            weights.push(w);
            latents.push(point);
        }
        let z: Vec<Vec<f64>> = latents.iter().map(|p| p.z.clone()).collect();
        let samples = self.invert(&z)?;
        Ok(Interpolation { weights, latents, samples })
    }
}
