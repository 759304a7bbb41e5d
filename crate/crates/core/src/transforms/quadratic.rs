use crate::error::{Error, Result};
use crate::numerics::{softmax_real, Real};

/// Piecewise-quadratic CDF on `[0, Q]`: learnable bin widths and a continuous
/// piecewise-linear density given by its values at the `K + 1` knots.
#[derive(Clone, Debug)]
pub struct QuadraticSpline<T = f64> {
    widths: Vec<T>,
    /// Bin edges `y_0 = 0 < … < y_K = Q`.
    knots: Vec<T>,
    /// Density at each edge, normalized so the total mass is one.
    vertices: Vec<T>,
    /// Cumulative mass at each edge, `z_0 = 0`, `z_K = 1`.
    cum: Vec<T>,
    q: f64,
}

impl<T: Real> QuadraticSpline<T> {
    /// `w = Q·softmax(ŵ)`, `v = exp(v̂) / Σ_k ((exp v̂_{k−1} + exp v̂_k)/2)·w_k`.
    pub fn from_logits(width_logits: &[T], vertex_logits: &[T], q: f64) -> Self {
        let bins = width_logits.len();
        assert!(bins > 0, "quadratic spline needs at least one bin");
        assert_eq!(vertex_logits.len(), bins + 1, "quadratic spline needs K+1 vertices");
        let widths: Vec<T> = softmax_real(width_logits).into_iter().map(|p| p * T::cst(q)).collect();
        let mut knots = Vec::with_capacity(bins + 1);
        knots.push(T::cst(0.0));
        for k in 0..bins - 1 {
            let next = knots[k] + widths[k];
            knots.push(next);
        }
        knots.push(T::cst(q));

        // exp(v̂ − max v̂): the shift cancels in the ratio.
        let shift = T::cst(vertex_logits.iter().map(|v| v.val()).fold(f64::NEG_INFINITY, f64::max));
        let raw: Vec<T> = vertex_logits.iter().map(|&v| (v - shift).exp()).collect();
        let mut norm = T::cst(0.0);
        for k in 0..bins {
            norm = norm + (raw[k] + raw[k + 1]) * T::cst(0.5) * widths[k];
        }
        let vertices: Vec<T> = raw.iter().map(|&r| r / norm).collect();

        let mut cum = Vec::with_capacity(bins + 1);
        cum.push(T::cst(0.0));
        for k in 0..bins - 1 {
            let next = cum[k] + (vertices[k] + vertices[k + 1]) * T::cst(0.5) * widths[k];
            cum.push(next);
        }
        cum.push(T::cst(1.0));
        QuadraticSpline { widths, knots, vertices, cum, q }
    }

    pub fn bins(&self) -> usize {
        self.widths.len()
    }

    pub fn domain(&self) -> f64 {
        self.q
    }

    pub fn widths(&self) -> &[T] {
        &self.widths
    }

    pub fn knots(&self) -> &[T] {
        &self.knots
    }

    pub fn vertices(&self) -> &[T] {
        &self.vertices
    }

    pub fn knots_z(&self) -> &[T] {
        &self.cum
    }

    /// Mass of bin `k`, `((v_{k−1} + v_k)/2)·w_k`.
    pub fn bin_mass(&self, k: usize) -> T {
        (self.vertices[k] + self.vertices[k + 1]) * T::cst(0.5) * self.widths[k]
    }

    fn bin_of(&self, y: f64) -> usize {
        let p = self.knots[1..self.bins()].partition_point(|k| k.val() <= y);
        p.min(self.bins() - 1)
    }

    fn alpha(&self, k: usize, y: T) -> T {
        (y - self.knots[k]) / self.widths[k]
    }

    pub fn cdf(&self, y: T) -> T {
        if y.val() >= self.q {
            return T::cst(1.0);
        }
        let k = self.bin_of(y.val());
        let a = self.alpha(k, y);
        let dv = self.vertices[k + 1] - self.vertices[k];
        self.cum[k] + self.widths[k] * (a * self.vertices[k] + T::cst(0.5) * a * a * dv)
    }

    pub fn density(&self, y: T) -> T {
        let k = self.bin_of(y.val());
        let a = self.alpha(k, y);
        self.vertices[k] + a * (self.vertices[k + 1] - self.vertices[k])
    }

    pub fn log_density(&self, y: T) -> T {
        self.density(y).ln()
    }

    /// Density on bin `k`, linear in `y`.
    fn density_in(&self, k: usize, y: T) -> T {
        let a = self.alpha(k, y);
        self.vertices[k] + a * (self.vertices[k + 1] - self.vertices[k])
    }

    /// `log(f(hi) − f(lo))` as a sum of trapezoids of the density, without
    /// differencing the CDF.
    pub fn log_interval_mass(&self, lo: T, hi: T) -> T {
        if hi.val() <= lo.val() {
            return T::cst(f64::NEG_INFINITY);
        }
        let a = self.bin_of(lo.val());
        let b = self.knots[1..self.bins()].partition_point(|k| k.val() < hi.val()).min(self.bins() - 1);
        let piece = |k: usize, from: T, to: T| (to - from) * (self.density_in(k, from) + self.density_in(k, to)) * T::cst(0.5);
        if a == b {
            return piece(a, lo, hi).ln();
        }
        let mut mass = piece(a, lo, self.knots[a + 1]);
        for k in a + 1..b {
            mass = mass + self.bin_mass(k);
        }
        mass = mass + piece(b, self.knots[b], hi);
        mass.ln()
    }
}

impl QuadraticSpline<f64> {
    fn check(&self, y: f64) -> Result<()> {
        if !(0.0..=self.q).contains(&y) {
            return Err(Error::domain(format!("quadratic spline input {y} outside [0, {}]", self.q)));
        }
        Ok(())
    }

    pub fn forward(&self, y: f64) -> Result<f64> {
        self.check(y)?;
        Ok(self.cdf(y))
    }

    pub fn derivative(&self, y: f64) -> Result<f64> {
        self.check(y)?;
        Ok(self.density(y))
    }

    /// Solves `½Δα² + v_{k−1}α − c = 0` with the rationalized root
    /// `α = 2c / (v_{k−1} + √(v_{k−1}² + 2Δc))`, which has no cancellation
    /// and stays finite as `Δ → 0`.
    pub fn inverse(&self, z: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&z) {
            return Err(Error::domain(format!("quadratic spline latent {z} outside [0, 1]")));
        }
        if z >= 1.0 {
            return Ok(self.q);
        }
        let k = match self.cum.partition_point(|&c| c <= z) {
            0 => 0,
            p => (p - 1).min(self.bins() - 1),
        };
        let w = self.widths[k];
        let v0 = self.vertices[k];
        let dv = self.vertices[k + 1] - v0;
        let c = (z - self.cum[k]) / w;
        let disc = (v0 * v0 + 2.0 * dv * c).max(0.0);
        let a = (2.0 * c / (v0 + disc.sqrt())).clamp(0.0, 1.0);
        let lo = self.knots[k];
        let hi = if k + 1 == self.bins() { self.q } else { self.knots[k + 1] };
        Ok((lo + a * w).clamp(lo, hi))
    }
}
